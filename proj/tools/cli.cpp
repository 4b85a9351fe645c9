#include "cli.hpp"

#include "ctg/checkpoint.hpp"
#include "ctg/config.hpp"
#include "ctg/data.hpp"
#include "ctg/eval.hpp"
#include "ctg/hpo.hpp"
#include "ctg/model.hpp"
#include "ctg/signal.hpp"
#include "ctg/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace ctg::cli {

namespace fs = std::filesystem;

namespace {

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string config_file;
  std::string preset;
};

struct TrainFlags {
  std::string data;
  std::optional<int> max_epochs;
  std::optional<int> patience;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  double val_fraction = 0.2;
};

struct Effective {
  ModelConfig model;
  TrainConfig train;
  data::GenSpec gen;
  hpo::SearchSpace space;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out-dir", c.out_dir, "Output directory (default: $CTG_RESULTS_DIR/<command>)");
  cmd->add_option("--config", c.config_file, "JSON config with model/train/generator/search sections")
      ->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset, "Built-in configuration preset")
      ->check(CLI::IsMember(preset_names()));
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--data", t.data, "Cohort file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--max-epochs", t.max_epochs, "Maximum training epochs")->check(CLI::NonNegativeNumber);
  cmd->add_option("--patience", t.patience, "Early-stopping patience")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", t.learning_rate, "Learning rate")->check(CLI::NonNegativeNumber);
  cmd->add_option("--batch-size", t.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--val-fraction", t.val_fraction, "Fraction of each class held out for validation")
      ->check(CLI::Range(0.0, 1.0));
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Defaults, then preset, then config file, then flags.
Effective resolve(const Common& c) {
  Effective e;
  if (!c.preset.empty()) {
    const Preset p = preset(c.preset);
    e.model = p.model;
    e.train = p.train;
  }
  if (!c.config_file.empty()) {
    const Json j = read_json_file(c.config_file);
    if (!j.is_object()) throw ConfigError(c.config_file + ": top level must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "model") apply_json(e.model, value);
      else if (key == "train") apply_json(e.train, value);
      else if (key == "generator") apply_json(e.gen, value);
      else if (key == "search") hpo::apply_json(e.space, value);
      else throw ConfigError("unknown section '" + key + "' in " + c.config_file);
    }
  }
  if (c.seed) {
    e.train.seed = *c.seed;
    e.gen.seed = *c.seed;
  }
  return e;
}

void apply_train_flags(const TrainFlags& t, TrainConfig& cfg) {
  if (t.max_epochs) cfg.max_epochs = *t.max_epochs;
  if (t.patience) cfg.patience = *t.patience;
  if (t.learning_rate) cfg.learning_rate = *t.learning_rate;
  if (t.batch_size) cfg.batch_size = *t.batch_size;
}

fs::path output_dir(const Common& c, const std::string& command) {
  fs::path dir;
  if (!c.out_dir.empty()) {
    dir = c.out_dir;
  } else if (const char* root = std::getenv("CTG_RESULTS_DIR"); root && *root) {
    dir = fs::path(root) / command;
  } else {
    dir = fs::path("results") / command;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw CliError("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError("cannot write " + path.string());
  out << text;
  if (!out) throw CliError("write failed for " + path.string());
}

void echo_config(const fs::path& dir, const std::string& command, const Json& body) {
  Json j = {{"command", command}};
  for (const auto& [k, v] : body.items()) j[k] = v;
  write_text(dir / "config.json", j.dump(2) + "\n");
}

std::vector<eval::Prediction> predictions_for(const std::vector<Trace>& traces,
                                              const ModelConfig& model, const ModelParams& params) {
  const std::vector<double> scores = predict(traces, model, params);
  std::vector<eval::Prediction> preds;
  preds.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i)
    preds.push_back({traces[i].trace_id, scores[i], traces[i].label, traces[i].days_to_delivery});
  return preds;
}

data::Cohort load_cohort(const std::string& path, const ModelConfig& model) {
  data::Cohort c = data::read_cohort(path, model.seq_len);
  data::validate_cohort(c);
  return c;
}

std::pair<double, double> parse_band(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw CliError("--dtd-band expects lo:hi, got '" + text + "'");
  try {
    std::size_t used_lo = 0, used_hi = 0;
    const std::string lo_text = text.substr(0, colon), hi_text = text.substr(colon + 1);
    const double lo = std::stod(lo_text, &used_lo);
    const double hi = std::stod(hi_text, &used_hi);
    if (used_lo != lo_text.size() || used_hi != hi_text.size() || lo > hi) throw std::invalid_argument("");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw CliError("--dtd-band expects lo:hi with lo <= hi, got '" + text + "'");
  }
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_fit_outputs(const fs::path& dir, const FitResult& fit, const ModelConfig& model,
                       const std::vector<eval::Prediction>& val_preds) {
  save_checkpoint(fit.params, model, (dir / "checkpoint.bin").string());
  write_log(fit.log, (dir / "log.csv").string(), false);
  write_log(fit.log, (dir / "timing.csv").string(), true);
  eval::write_predictions(val_preds, (dir / "val_predictions.csv").string());
}

// ---- subcommands ----------------------------------------------------------

int cmd_generate(const Common& c, std::optional<std::size_t> n_per_class, const std::string& out_file,
                 std::ostream& out) {
  Effective e = resolve(c);
  if (n_per_class) e.gen.n_per_class = *n_per_class;
  e.gen.validate();
  const fs::path dir = output_dir(c, "generate");
  const fs::path path = out_file.empty() ? dir / "cohort.csv" : fs::path(out_file);
  const data::Cohort cohort = data::generate_cohort(e.gen);
  data::write_cohort(cohort, path.string());
  echo_config(dir, "generate", {{"generator", to_json(e.gen)}, {"out", path.string()}});
  out << "wrote " << cohort.traces.size() << " traces to " << path.string() << "\n"
      << "NPO " << cohort.count(0) << "  APO " << cohort.count(1) << "\n"
      << "digest " << data::digest_hex(cohort) << "\n";
  return 0;
}

int cmd_preprocess(const Common& c, const std::string& raw_path, const std::string& out_file,
                   std::ostream& out) {
  const fs::path dir = output_dir(c, "preprocess");
  const fs::path path = out_file.empty() ? dir / "cohort.csv" : fs::path(out_file);
  data::Cohort cohort;
  cohort.provenance = "preprocessed from " + raw_path;
  std::size_t dropped = 0;
  for (const auto& raw : data::read_raw_traces(raw_path)) {
    const auto windows = signal::preprocess(raw);
    const auto n_chunks = (raw.fhr.size() + static_cast<std::size_t>(signal::kWindowLength) - 1) /
                          static_cast<std::size_t>(signal::kWindowLength);
    dropped += n_chunks - windows.size();
    cohort.traces.insert(cohort.traces.end(), windows.begin(), windows.end());
  }
  data::validate_cohort(cohort);
  data::write_cohort(cohort, path.string());
  echo_config(dir, "preprocess", {{"raw", raw_path}, {"out", path.string()}});
  out << "wrote " << cohort.traces.size() << " windows to " << path.string() << " (" << dropped
      << " dropped for missing FHR)\n";
  return 0;
}

int cmd_train(const Common& c, const TrainFlags& t, std::ostream& out) {
  Effective e = resolve(c);
  apply_train_flags(t, e.train);
  e.model.validate();
  e.train.validate();
  const fs::path dir = output_dir(c, "train");
  const data::Cohort cohort = load_cohort(t.data, e.model);
  const auto [train_set, val_set] = data::split(cohort, 1.0 - t.val_fraction, e.train.seed);
  echo_config(dir, "train",
              {{"model", to_json(e.model)}, {"train", to_json(e.train)}, {"data", t.data},
               {"val_fraction", t.val_fraction}});

  const FitResult fit = ctg::fit(e.model, e.train, train_set.traces, val_set.traces);
  const auto preds = predictions_for(val_set.traces, e.model, fit.params);
  write_fit_outputs(dir, fit, e.model, preds);
  out << "trained " << fit.log.epochs.size() << " epochs (" << to_string(fit.log.stop_reason)
      << "); best epoch " << fit.log.best_epoch << " val AUC " << fixed(fit.log.best_val_auc) << "\n"
      << "outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_finetune(const Common& c, const TrainFlags& t, const std::string& from,
                 const std::string& band_text, std::ostream& out) {
  const auto [lo, hi] = parse_band(band_text);
  Effective e = resolve(c);
  apply_train_flags(t, e.train);
  const Checkpoint ck = load_checkpoint(from);
  ModelConfig model = ck.config;
  if (!c.config_file.empty()) {
    const Json j = read_json_file(c.config_file);
    if (j.contains("model")) apply_json(model, j.at("model"));
  }
  model.validate();
  e.train.validate();
  e.train.finetune_from = from;
  const fs::path dir = output_dir(c, "finetune");
  const data::Cohort cohort = load_cohort(t.data, model);
  const auto [train_all, val_all] = data::split(cohort, 1.0 - t.val_fraction, e.train.seed);
  const data::Cohort train_band = data::filter_dtd(train_all, lo, hi);
  const data::Cohort val_band = data::filter_dtd(val_all, lo, hi);
  echo_config(dir, "finetune",
              {{"model", to_json(model)}, {"train", to_json(e.train)}, {"data", t.data},
               {"dtd_band", {lo, hi}}, {"val_fraction", t.val_fraction}});

  const double zero_shot = validation_auc(ck.params, val_band.traces, model);
  const FitResult fit = finetune(ck.config, ck.params, model, e.train, train_band.traces, val_band.traces);
  const auto preds = predictions_for(val_band.traces, model, fit.params);
  write_fit_outputs(dir, fit, model, preds);
  const Json summary = {{"zero_shot_val_auc", zero_shot},
                        {"finetuned_val_auc", fit.log.best_val_auc},
                        {"best_epoch", fit.log.best_epoch},
                        {"epochs", fit.log.epochs.size()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "band " << lo << ":" << hi << "  train " << train_band.traces.size() << "  val "
      << val_band.traces.size() << "\n"
      << "zero-shot val AUC " << fixed(zero_shot) << "  finetuned val AUC "
      << fixed(fit.log.best_val_auc) << " (epoch " << fit.log.best_epoch << ")\n";
  return 0;
}

struct EvalFlags {
  std::string preds;
  std::string checkpoint;
  std::string data;
  std::string threshold = "youden";
  std::optional<double> dtd_max;
  double sensitivity_target = 0.90;
  double specificity_target = 0.90;
};

int cmd_eval(const Common& c, const EvalFlags& f, std::ostream& out) {
  eval::AnalysisOptions opts;
  opts.sensitivity_target = f.sensitivity_target;
  opts.specificity_target = f.specificity_target;
  std::string selected = f.threshold;
  static const std::vector<std::string> named{"default", "youden", "high_sensitivity",
                                              "high_specificity"};
  if (std::find(named.begin(), named.end(), selected) == named.end()) {
    try {
      std::size_t used = 0;
      opts.default_threshold = std::stod(selected, &used);
      if (used != selected.size()) throw std::invalid_argument("");
    } catch (const std::logic_error&) {
      throw CliError("--threshold must be a number or one of default, youden, high_sensitivity, "
                     "high_specificity; got '" + selected + "'");
    }
    selected = "default";
  }
  if (f.preds.empty() == f.checkpoint.empty())
    throw CliError("eval needs either --preds or --checkpoint with --data");
  if (!f.checkpoint.empty() && f.data.empty()) throw CliError("--checkpoint requires --data");
  const fs::path dir = output_dir(c, "eval");

  std::vector<eval::Prediction> preds;
  if (!f.preds.empty()) {
    preds = eval::read_predictions(f.preds);
  } else {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    const data::Cohort cohort = load_cohort(f.data, ck.config);
    preds = predictions_for(cohort.traces, ck.config, ck.params);
    eval::write_predictions(preds, (dir / "predictions.csv").string());
  }
  const eval::RocAnalysis analysis =
      f.dtd_max ? eval::evaluate_by_dtd(preds, *f.dtd_max, opts) : eval::analyze(preds, opts);
  Json cfg = {{"preds", f.preds}, {"checkpoint", f.checkpoint}, {"data", f.data},
              {"threshold", f.threshold}, {"default_threshold", opts.default_threshold},
              {"sensitivity_target", opts.sensitivity_target},
              {"specificity_target", opts.specificity_target}};
  cfg["dtd_max"] = f.dtd_max ? Json(*f.dtd_max) : Json(nullptr);
  echo_config(dir, "eval", cfg);
  write_text(dir / "report.json", eval::report_json(analysis));
  write_text(dir / "roc.csv", eval::roc_csv(analysis));
  write_text(dir / "thresholds.csv", eval::threshold_table_csv(analysis));

  out << "n " << preds.size() << "  APO " << analysis.n_positive << "  NPO " << analysis.n_negative
      << "  AUC " << fixed(analysis.auc) << "\n";
  for (const auto& op : analysis.thresholds) {
    if (op.name != selected) continue;
    out << "threshold " << op.name << " = "
        << (op.threshold ? fixed(*op.threshold) : std::string("unattainable")) << "\n"
        << "sensitivity " << eval::format_metric(op.metrics.sensitivity) << "  specificity "
        << eval::format_metric(op.metrics.specificity) << "  ppv " << eval::format_metric(op.metrics.ppv)
        << "  npv " << eval::format_metric(op.metrics.npv) << "  f1 " << eval::format_metric(op.metrics.f1)
        << "  accuracy " << eval::format_metric(op.metrics.accuracy) << "\n";
  }
  out << "outputs in " << dir.string() << "\n";
  return 0;
}

struct HpoFlags {
  std::string data;
  std::size_t trials = 100;
  std::optional<int> max_epochs;
  std::optional<int> patience;
  std::string space_config;
  bool median_pruning = false;
  double val_fraction = 0.2;
};

int cmd_hpo(const Common& c, const HpoFlags& h, std::ostream& out) {
  Effective e = resolve(c);
  if (!h.space_config.empty()) hpo::apply_json(e.space, read_json_file(h.space_config));
  e.space.validate();
  if (!e.space.within_default())
    out << "note: search space extends beyond the default grids\n";
  hpo::SearchOptions opts;
  opts.n_trials = h.trials;
  opts.seed = e.train.seed;
  opts.median_pruning = h.median_pruning;
  if (h.max_epochs) opts.max_epochs = *h.max_epochs;
  if (h.patience) opts.patience = *h.patience;
  const fs::path dir = output_dir(c, "hpo");
  const data::Cohort cohort = load_cohort(h.data, e.model);
  const auto [train_set, val_set] = data::split(cohort, 1.0 - h.val_fraction, e.train.seed);
  echo_config(dir, "hpo",
              {{"search", hpo::to_json(e.space)}, {"base_model", to_json(e.model)},
               {"base_train", to_json(e.train)}, {"data", h.data}, {"trials", h.trials},
               {"max_epochs", opts.max_epochs}, {"patience", opts.patience},
               {"median_pruning", h.median_pruning}, {"val_fraction", h.val_fraction}});

  const hpo::SearchResult result =
      hpo::run_search(e.space, train_set.traces, val_set.traces, opts, {e.model, e.train});
  fs::create_directories(dir / "trials");
  for (const auto& t : result.trials) {
    std::ostringstream name;
    name << "trial_" << std::setw(3) << std::setfill('0') << t.index << ".csv";
    write_log(t.log, (dir / "trials" / name.str()).string(), false);
  }
  write_text(dir / "leaderboard.csv", hpo::leaderboard_csv(result.trials));
  const auto& best = result.trials[result.best];
  write_text(dir / "best_config.json",
             Json({{"model", to_json(best.config.model)}, {"train", to_json(best.config.train)}})
                     .dump(2) + "\n");
  std::size_t failed = 0;
  for (const auto& t : result.trials) failed += t.status == hpo::TrialStatus::failed;
  out << result.trials.size() << " trials (" << failed << " failed); best trial " << best.index
      << " val AUC " << fixed(*best.best_val_auc) << "\n"
      << "outputs in " << dir.string() << "\n";
  return 0;
}

// Error text names the module that raised it.
template <typename F>
int guarded(F&& body, std::ostream& err) {
  auto report = [&](const char* module, const std::exception& ex) {
    err << "patchctg: " << module << " error: " << ex.what() << "\n";
    return 1;
  };
  try {
    return body();
  } catch (const signal::SignalError& ex) {
    return report("signal", ex);
  } catch (const ModelError& ex) {
    return report("model", ex);
  } catch (const CheckpointError& ex) {
    return report("checkpoint", ex);
  } catch (const TrainError& ex) {
    return report("train", ex);
  } catch (const eval::EvalError& ex) {
    return report("eval", ex);
  } catch (const data::DataError& ex) {
    return report("data", ex);
  } catch (const hpo::SearchError& ex) {
    return report("hpo", ex);
  } catch (const ConfigError& ex) {
    return report("config", ex);
  } catch (const TensorError& ex) {
    return report("numcore", ex);
  } catch (const CliError& ex) {
    return report("cli", ex);
  } catch (const std::exception& ex) {
    return report("internal", ex);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Patch-based transformer for two-channel CTG classification", "patchctg"};
  app.require_subcommand(1);

  Common common;
  std::optional<std::size_t> n_per_class;
  std::string out_file, raw_path, from, band;
  TrainFlags train_flags;
  EvalFlags eval_flags;
  HpoFlags hpo_flags;

  auto* gen = app.add_subcommand("generate", "Write a synthetic cohort");
  add_common(gen, common);
  gen->add_option("--n-per-class", n_per_class, "Traces per class")->check(CLI::PositiveNumber);
  gen->add_option("--out", out_file, "Cohort file (default: <out-dir>/cohort.csv)");

  auto* pre = app.add_subcommand("preprocess", "Clip, scale, window and mask raw recordings");
  add_common(pre, common);
  pre->add_option("--raw", raw_path, "Raw trace file")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out_file, "Cohort file (default: <out-dir>/cohort.csv)");

  auto* tr = app.add_subcommand("train", "Fit a model with early stopping on validation AUC");
  add_common(tr, common);
  add_train_flags(tr, train_flags);

  auto* ft = app.add_subcommand("finetune", "Continue training a checkpoint on a days-to-delivery band");
  add_common(ft, common);
  add_train_flags(ft, train_flags);
  ft->add_option("--from", from, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--dtd-band", band, "Days-to-delivery band lo:hi for adverse cases")->required();

  auto* ev = app.add_subcommand("eval", "ROC analysis and threshold metrics");
  add_common(ev, common);
  ev->add_option("--preds", eval_flags.preds, "Prediction file")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint to score --data with")
      ->check(CLI::ExistingFile);
  ev->add_option("--data", eval_flags.data, "Cohort file")->check(CLI::ExistingFile);
  ev->add_option("--threshold", eval_flags.threshold,
                 "default, youden, high_sensitivity, high_specificity or a number");
  ev->add_option("--dtd-max", eval_flags.dtd_max, "Only adverse cases with days to delivery <= this");
  ev->add_option("--sensitivity-target", eval_flags.sensitivity_target)->check(CLI::Range(0.0, 1.0));
  ev->add_option("--specificity-target", eval_flags.specificity_target)->check(CLI::Range(0.0, 1.0));

  auto* hp = app.add_subcommand("hpo", "Seeded random search over the model and training grids");
  add_common(hp, common);
  hp->add_option("--data", hpo_flags.data, "Cohort file")->required()->check(CLI::ExistingFile);
  hp->add_option("--trials", hpo_flags.trials, "Number of trials")->check(CLI::PositiveNumber);
  hp->add_option("--max-epochs", hpo_flags.max_epochs)->check(CLI::NonNegativeNumber);
  hp->add_option("--patience", hpo_flags.patience)->check(CLI::PositiveNumber);
  hp->add_option("--space-config", hpo_flags.space_config, "JSON search space")
      ->check(CLI::ExistingFile);
  hp->add_flag("--median-pruning", hpo_flags.median_pruning, "Prune trials below the running median");
  hp->add_option("--val-fraction", hpo_flags.val_fraction)->check(CLI::Range(0.0, 1.0));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e, out, err);
    return status == 0 ? 0 : 2;
  }

  return guarded(
      [&]() -> int {
        if (gen->parsed()) return cmd_generate(common, n_per_class, out_file, out);
        if (pre->parsed()) return cmd_preprocess(common, raw_path, out_file, out);
        if (tr->parsed()) return cmd_train(common, train_flags, out);
        if (ft->parsed()) return cmd_finetune(common, train_flags, from, band, out);
        if (ev->parsed()) return cmd_eval(common, eval_flags, out);
        return cmd_hpo(common, hpo_flags, out);
      },
      err);
}

}  // namespace ctg::cli
