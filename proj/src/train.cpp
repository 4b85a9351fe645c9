#include "ctg/train.hpp"

#include "ctg/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ctg {

namespace {

std::vector<eval::Prediction> to_predictions(const std::vector<Trace>& traces,
                                             const std::vector<double>& scores) {
  std::vector<eval::Prediction> preds;
  preds.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i)
    preds.push_back({traces[i].trace_id, scores[i], traces[i].label, traces[i].days_to_delivery});
  return preds;
}

void check_disjoint(const std::vector<Trace>& a, const std::vector<Trace>& b) {
  std::unordered_set<std::string> ids;
  for (const auto& t : a) ids.insert(t.trace_id);
  for (const auto& t : b)
    if (ids.count(t.trace_id))
      throw TrainError("trace '" + t.trace_id + "' appears in both training and validation sets");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw TrainError("learning_rate must be finite and non-negative");
  if (batch_size < 1) throw TrainError("batch_size must be >= 1");
  if (max_epochs < 0) throw TrainError("max_epochs must be >= 0");
  if (patience < 1) throw TrainError("patience must be >= 1");
}

double bce_loss(double probability, int label) {
  const double p = std::clamp(probability, kLossClamp, 1.0 - kLossClamp);
  const double y = label;
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::early_stop: return "early_stop";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::pruned: return "pruned";
  }
  return "unknown";
}

Adam::Adam(const ModelParams& like) : m_(zeros_like(like)), v_(zeros_like(like)) {}

void Adam::step(ModelParams& params, const ModelParams& grads, double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  std::vector<Matrix*> p, m, v;
  std::vector<const Matrix*> g;
  params.for_each([&](const std::string&, Matrix& x) { p.push_back(&x); });
  m_.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
  v_.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });
  grads.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });
  if (p.size() != g.size() || p.size() != m.size()) throw TrainError("optimizer state mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto gi = g[i]->array();
    m[i]->array() = beta1 * m[i]->array() + (1 - beta1) * gi;
    v[i]->array() = beta2 * v[i]->array() + (1 - beta2) * gi.square();
    p[i]->array() -= learning_rate * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + eps);
  }
}

ModelParams batch_gradient(const ModelParams& params, const std::vector<const Trace*>& batch,
                           const ModelConfig& model, bool training, std::uint64_t seed,
                           double* mean_loss) {
  if (batch.empty()) throw TrainError("empty batch");
  // One graph per sample; every graph feeds the same leaves, whose grads
  // accumulate the batch sum.
  const ParamLeaves leaves = make_leaves(params, true);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::mt19937_64 seeds(seed);
  double total = 0;
  for (const Trace* t : batch) {
    const Tensor prob = forward(*t, model, leaves, training, seeds());
    const Tensor loss = scale(binary_cross_entropy(prob, {static_cast<double>(t->label)}, kLossClamp), inv_b);
    total += loss.item();
    backward(loss);
  }
  if (mean_loss) *mean_loss = total;
  return collect_grads(leaves);
}

EpochStats train_epoch(ModelParams& params, Adam& optimizer, const std::vector<Trace>& train,
                       const ModelConfig& model, const TrainConfig& config, std::mt19937_64& rng) {
  if (train.empty()) throw TrainError("training set is empty");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  EpochStats stats;
  double weighted = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<const Trace*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
    double loss = 0;
    const ModelParams grads = batch_gradient(params, batch, model, true, rng(), &loss);
    optimizer.step(params, grads, config.learning_rate);
    weighted += loss * static_cast<double>(batch.size());
    ++stats.batches;
  }
  stats.mean_loss = weighted / static_cast<double>(train.size());
  return stats;
}

double validation_auc(const ModelParams& params, const std::vector<Trace>& val,
                      const ModelConfig& model) {
  return eval::auc(to_predictions(val, predict(val, model, params)));
}

FitResult fit(const ModelConfig& model, const TrainConfig& config, const std::vector<Trace>& train,
              const std::vector<Trace>& val, std::optional<ModelParams> initial,
              const EpochCallback& on_epoch) {
  model.validate();
  config.validate();
  if (train.empty()) throw TrainError("training set is empty");
  if (val.empty()) throw TrainError("validation set is empty");
  check_disjoint(train, val);

  ModelParams params = initial ? std::move(*initial) : init_params(model, config.seed);
  check_shapes(params, model);
  Adam optimizer(params);
  std::mt19937_64 rng(config.seed ^ 0x5851F42D4C957F2DULL);

  FitResult result{params, {}};
  double best = -std::numeric_limits<double>::infinity();
  double patience_ref = best;  // last AUC that reset the patience counter
  int since_improvement = 0;
  result.log.stop_reason = StopReason::max_epochs;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochStats stats = train_epoch(params, optimizer, train, model, config, rng);
    const double auc = validation_auc(params, val, model);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back({epoch, stats.mean_loss, auc, secs});

    if (auc > best) {
      best = auc;
      result.log.best_epoch = epoch;
      result.log.best_val_auc = auc;
      result.params = params;
    }
    if (auc > patience_ref + kMinImprovement) {
      patience_ref = auc;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    if (on_epoch && !on_epoch(result.log.epochs.back())) {
      result.log.stop_reason = StopReason::pruned;
      break;
    }
    if (since_improvement >= config.patience) {
      result.log.stop_reason = StopReason::early_stop;
      break;
    }
  }
  return result;
}

FitResult finetune(const ModelConfig& pretrained_config, const ModelParams& pretrained,
                   const ModelConfig& model, const TrainConfig& config,
                   const std::vector<Trace>& train, const std::vector<Trace>& val) {
  if (!pretrained_config.same_architecture(model))
    throw TrainError("checkpoint architecture does not match the finetuning configuration");
  check_shapes(pretrained, model);
  return fit(model, config, train, val, pretrained);
}

std::string format_log(const TrainLog& log, bool include_timing) {
  std::ostringstream os;
  os << (include_timing ? "epoch,loss,val_auc,seconds\n" : "epoch,loss,val_auc\n");
  os << std::setprecision(17);
  for (const auto& e : log.epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_auc;
    if (include_timing) os << ',' << std::setprecision(6) << e.seconds << std::setprecision(17);
    os << '\n';
  }
  return os.str();
}

void write_log(const TrainLog& log, const std::string& path, bool include_timing) {
  std::ofstream out(path);
  if (!out) throw TrainError("cannot write training log to " + path);
  out << format_log(log, include_timing);
}

std::vector<EpochRecord> read_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot open training log " + path);
  std::vector<EpochRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("epoch,", 0) == 0) continue;
    EpochRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream ss(line);
    bool ok = static_cast<bool>(ss >> r.epoch >> c1 >> r.train_loss >> c2 >> r.val_auc) &&
              c1 == ',' && c2 == ',';
    if (ok && ss >> c3) ok = c3 == ',' && static_cast<bool>(ss >> r.seconds);
    if (!ok || !(ss >> std::ws).eof())
      throw TrainError(path + ":" + std::to_string(lineno) + ": malformed log line");
    out.push_back(r);
  }
  return out;
}

}  // namespace ctg
