#pragma once

#include "ctg/config.hpp"
#include "ctg/train.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ctg::hpo {

class SearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grids searched per dimension. The defaults are the full search space;
/// within_default() reports whether a narrower space stays inside it.
struct SearchSpace {
  std::vector<Index> n_layers{3, 4, 5, 6};
  std::vector<Index> n_heads{4, 8, 16, 32};
  std::vector<Index> d_model{64, 128, 192, 256, 384, 512, 640};
  std::vector<Index> d_ff{128, 192, 256, 320, 384, 512, 640};
  double dropout_min = 0.1;
  double dropout_max = 0.5;
  std::vector<double> learning_rate{1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3};
  std::vector<std::size_t> batch_size{16, 32, 48, 64};
  std::vector<Index> patch_len{4, 8, 16, 32};
  std::vector<Index> stride{4, 8, 16};
  std::vector<Activation> activation{Activation::relu, Activation::gelu, Activation::elu};

  void validate() const;
  /// True when every grid is a subset of the default space's grid.
  bool within_default() const;
  /// True when the configuration's searched fields lie in this space.
  bool contains(const ModelConfig& model, const TrainConfig& train) const;
};

Json to_json(const SearchSpace& space);
void apply_json(SearchSpace& space, const Json& j);

struct TrialConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Independent uniform draw per dimension, deterministic in (seed, index).
/// Heads/width pairs that do not divide are redrawn. `base` supplies the
/// fields the space does not search (sequence length, epochs, patience).
TrialConfig sample_trial(const SearchSpace& space, std::uint64_t seed, std::size_t index,
                         const TrialConfig& base = {});

enum class TrialStatus { completed, pruned, failed };
std::string to_string(TrialStatus status);

struct TrialRecord {
  std::size_t index = 0;
  TrialConfig config;
  TrainLog log;
  std::optional<double> best_val_auc;  // absent iff failed
  TrialStatus status = TrialStatus::failed;
  std::string error;
};

struct SearchOptions {
  std::size_t n_trials = 100;
  int max_epochs = 60;
  int patience = 10;
  std::uint64_t seed = 1;
  bool median_pruning = false;
  int pruning_warmup = 10;  // first epoch at which pruning may fire
};

struct SearchResult {
  std::vector<TrialRecord> trials;
  std::size_t best = 0;  // index into trials
  std::vector<double> running_best;  // best_val_auc so far after each trial
};

/// Runs the trials sequentially with `fit`, optionally pruning a trial whose
/// validation AUC at epoch k >= warmup falls below the median of earlier
/// completed trials at epoch k. Best = highest AUC, ties to the earlier
/// trial; pruned trials only win when nothing completed.
SearchResult run_search(const SearchSpace& space, const std::vector<Trace>& train,
                        const std::vector<Trace>& val, const SearchOptions& options,
                        const TrialConfig& base = {});

/// Trials ordered by best_val_auc descending (failed last, ties by index).
std::vector<TrialRecord> leaderboard(const std::vector<TrialRecord>& trials);
std::string leaderboard_csv(const std::vector<TrialRecord>& trials);

}  // namespace ctg::hpo
