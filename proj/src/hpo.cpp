#include "ctg/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

namespace ctg::hpo {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
const T& pick(const std::vector<T>& grid, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, grid.size() - 1);
  return grid[dist(rng)];
}

template <typename T>
bool subset(const std::vector<T>& small, const std::vector<T>& big) {
  return std::all_of(small.begin(), small.end(), [&](const T& v) {
    return std::find(big.begin(), big.end(), v) != big.end();
  });
}

template <typename T>
bool member(const T& v, const std::vector<T>& grid) {
  return std::find(grid.begin(), grid.end(), v) != grid.end();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void SearchSpace::validate() const {
  if (n_layers.empty() || n_heads.empty() || d_model.empty() || d_ff.empty() ||
      learning_rate.empty() || batch_size.empty() || patch_len.empty() || stride.empty() ||
      activation.empty())
    throw SearchError("every search dimension needs at least one value");
  if (!(dropout_min >= 0 && dropout_min <= dropout_max && dropout_max < 1))
    throw SearchError("dropout range must satisfy 0 <= min <= max < 1");
  bool divisible = false;
  for (Index d : d_model)
    for (Index h : n_heads) divisible = divisible || (h > 0 && d % h == 0);
  if (!divisible) throw SearchError("no (d_model, n_heads) pair in the space is divisible");
}

bool SearchSpace::within_default() const {
  const SearchSpace full;
  return subset(n_layers, full.n_layers) && subset(n_heads, full.n_heads) &&
         subset(d_model, full.d_model) && subset(d_ff, full.d_ff) &&
         dropout_min >= full.dropout_min && dropout_max <= full.dropout_max &&
         subset(learning_rate, full.learning_rate) && subset(batch_size, full.batch_size) &&
         subset(patch_len, full.patch_len) && subset(stride, full.stride) &&
         subset(activation, full.activation);
}

bool SearchSpace::contains(const ModelConfig& m, const TrainConfig& t) const {
  auto in_range = [&](double r) { return r >= dropout_min && r <= dropout_max; };
  return member(m.n_layers, n_layers) && member(m.n_heads, n_heads) &&
         member(m.d_model, d_model) && member(m.d_ff, d_ff) && in_range(m.dropout) &&
         in_range(m.fc_dropout) && in_range(m.attn_dropout) &&
         member(t.learning_rate, learning_rate) && member(t.batch_size, batch_size) &&
         member(m.patch_len, patch_len) && member(m.stride, stride) &&
         member(m.activation, activation) && m.d_model % m.n_heads == 0;
}

Json to_json(const SearchSpace& s) {
  std::vector<std::string> acts;
  for (auto a : s.activation) acts.push_back(to_string(a));
  return {{"n_layers", s.n_layers},   {"n_heads", s.n_heads},
          {"d_model", s.d_model},     {"d_ff", s.d_ff},
          {"dropout", {s.dropout_min, s.dropout_max}},
          {"learning_rate", s.learning_rate},
          {"batch_size", s.batch_size},
          {"patch_len", s.patch_len}, {"stride", s.stride},
          {"activation", acts}};
}

void apply_json(SearchSpace& s, const Json& j) {
  if (!j.is_object()) throw ConfigError("search config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "n_layers") s.n_layers = v.get<std::vector<Index>>();
      else if (key == "n_heads") s.n_heads = v.get<std::vector<Index>>();
      else if (key == "d_model") s.d_model = v.get<std::vector<Index>>();
      else if (key == "d_ff") s.d_ff = v.get<std::vector<Index>>();
      else if (key == "learning_rate") s.learning_rate = v.get<std::vector<double>>();
      else if (key == "batch_size") s.batch_size = v.get<std::vector<std::size_t>>();
      else if (key == "patch_len") s.patch_len = v.get<std::vector<Index>>();
      else if (key == "stride") s.stride = v.get<std::vector<Index>>();
      else if (key == "dropout") {
        const auto r = v.get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("search.dropout must be [min, max]");
        s.dropout_min = r[0];
        s.dropout_max = r[1];
      } else if (key == "activation") {
        s.activation.clear();
        for (const auto& name : v.get<std::vector<std::string>>())
          s.activation.push_back(parse_activation(name));
      } else {
        throw ConfigError("unknown key '" + key + "' in search config");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("search." + key + ": " + e.what());
    } catch (const TensorError& e) {
      throw ConfigError("search." + key + ": " + e.what());
    }
  }
}

TrialConfig sample_trial(const SearchSpace& space, std::uint64_t seed, std::size_t index,
                         const TrialConfig& base) {
  space.validate();
  std::mt19937_64 rng(mix(seed, index));
  TrialConfig t = base;
  auto& m = t.model;
  m.n_layers = pick(space.n_layers, rng);
  m.n_heads = pick(space.n_heads, rng);
  m.d_model = pick(space.d_model, rng);
  m.d_ff = pick(space.d_ff, rng);
  std::uniform_real_distribution<double> drop(space.dropout_min, space.dropout_max);
  m.dropout = drop(rng);
  m.fc_dropout = drop(rng);
  m.attn_dropout = drop(rng);
  t.train.learning_rate = pick(space.learning_rate, rng);
  t.train.batch_size = pick(space.batch_size, rng);
  m.patch_len = pick(space.patch_len, rng);
  m.stride = pick(space.stride, rng);
  m.activation = pick(space.activation, rng);
  while (m.d_model % m.n_heads != 0) {
    m.n_heads = pick(space.n_heads, rng);
    m.d_model = pick(space.d_model, rng);
  }
  t.train.seed = mix(seed ^ 0xA5A5A5A5ULL, index);
  return t;
}

std::string to_string(TrialStatus status) {
  switch (status) {
    case TrialStatus::completed: return "completed";
    case TrialStatus::pruned: return "pruned";
    case TrialStatus::failed: return "failed";
  }
  return "unknown";
}

SearchResult run_search(const SearchSpace& space, const std::vector<Trace>& train,
                        const std::vector<Trace>& val, const SearchOptions& options,
                        const TrialConfig& base) {
  space.validate();
  if (options.n_trials == 0) throw SearchError("n_trials must be positive");
  SearchResult result;
  double running = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < options.n_trials; ++i) {
    TrialRecord rec;
    rec.index = i;
    rec.config = sample_trial(space, options.seed, i, base);
    rec.config.train.max_epochs = options.max_epochs;
    rec.config.train.patience = options.patience;
    EpochCallback prune;
    if (options.median_pruning) {
      prune = [&](const EpochRecord& e) {
        if (e.epoch < options.pruning_warmup) return true;
        std::vector<double> peers;
        for (const auto& t : result.trials) {
          if (t.status != TrialStatus::completed) continue;
          if (static_cast<int>(t.log.epochs.size()) >= e.epoch)
            peers.push_back(t.log.epochs[static_cast<std::size_t>(e.epoch - 1)].val_auc);
        }
        return peers.empty() || e.val_auc >= median(peers);
      };
    }
    try {
      auto fitted = fit(rec.config.model, rec.config.train, train, val, std::nullopt, prune);
      rec.log = std::move(fitted.log);
      rec.status = rec.log.stop_reason == StopReason::pruned ? TrialStatus::pruned
                                                             : TrialStatus::completed;
      if (rec.log.epochs.empty()) {
        rec.status = TrialStatus::failed;
        rec.error = "no epochs ran";
      } else {
        rec.best_val_auc = rec.log.best_val_auc;
      }
    } catch (const std::exception& e) {
      rec.status = TrialStatus::failed;
      rec.error = e.what();
    }
    if (rec.best_val_auc && !(*rec.best_val_auc <= running)) running = *rec.best_val_auc;
    result.running_best.push_back(running);
    result.trials.push_back(std::move(rec));
  }

  std::optional<std::size_t> best;
  for (TrialStatus wanted : {TrialStatus::completed, TrialStatus::pruned}) {
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
      const auto& t = result.trials[i];
      if (t.status != wanted) continue;
      if (!best || *t.best_val_auc > *result.trials[*best].best_val_auc) best = i;
    }
    if (best) break;
  }
  if (!best) throw SearchError("all " + std::to_string(options.n_trials) + " trials failed");
  result.best = *best;
  return result;
}

std::vector<TrialRecord> leaderboard(const std::vector<TrialRecord>& trials) {
  if (trials.empty()) throw SearchError("cannot rank an empty trial list");
  std::vector<TrialRecord> sorted = trials;
  std::stable_sort(sorted.begin(), sorted.end(), [](const TrialRecord& a, const TrialRecord& b) {
    if (a.best_val_auc.has_value() != b.best_val_auc.has_value()) return a.best_val_auc.has_value();
    if (a.best_val_auc && *a.best_val_auc != *b.best_val_auc) return *a.best_val_auc > *b.best_val_auc;
    return a.index < b.index;
  });
  return sorted;
}

std::string leaderboard_csv(const std::vector<TrialRecord>& trials) {
  std::ostringstream os;
  os << "rank,trial,status,best_val_auc,epochs,n_layers,n_heads,d_model,d_ff,dropout,fc_dropout,"
        "attn_dropout,learning_rate,batch_size,patch_len,stride,activation,kernel_size\n";
  os << std::setprecision(17);
  std::size_t rank = 1;
  for (const auto& t : leaderboard(trials)) {
    const auto& m = t.config.model;
    os << rank++ << ',' << t.index << ',' << to_string(t.status) << ',';
    if (t.best_val_auc) os << *t.best_val_auc;
    else os << "NA";
    os << ',' << t.log.epochs.size() << ',' << m.n_layers << ',' << m.n_heads << ',' << m.d_model
       << ',' << m.d_ff << ',' << m.dropout << ',' << m.fc_dropout << ',' << m.attn_dropout << ','
       << t.config.train.learning_rate << ',' << t.config.train.batch_size << ',' << m.patch_len
       << ',' << m.stride << ',' << to_string(m.activation) << ',' << m.kernel_size << '\n';
  }
  return os.str();
}

}  // namespace ctg::hpo
