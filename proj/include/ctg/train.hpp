#pragma once

#include "ctg/model.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ctg {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  int max_epochs = 50;
  int patience = 10;
  std::uint64_t seed = 1;
  std::optional<std::string> finetune_from;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

inline constexpr double kLossClamp = 1e-12;
// Validation AUC must beat the best so far by this much to reset patience.
inline constexpr double kMinImprovement = 1e-6;

/// -(y ln p + (1 - y) ln(1 - p)) with p clamped to [1e-12, 1 - 1e-12].
double bce_loss(double probability, int label);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_auc = 0;
  double seconds = 0;
};

enum class StopReason { early_stop, max_epochs, pruned };
std::string to_string(StopReason reason);

struct TrainLog {
  std::vector<EpochRecord> epochs;
  StopReason stop_reason = StopReason::max_epochs;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_auc = std::numeric_limits<double>::quiet_NaN();
};

/// Adaptive-moment optimiser state (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  explicit Adam(const ModelParams& like);
  void step(ModelParams& params, const ModelParams& grads, double learning_rate);
  long steps() const { return t_; }

 private:
  ModelParams m_, v_;
  long t_ = 0;
};

struct EpochStats {
  double mean_loss = 0;
  std::size_t batches = 0;
};

/// One shuffled pass in mini-batches over `train`, one optimiser step per
/// batch on the mean batch loss.
EpochStats train_epoch(ModelParams& params, Adam& optimizer, const std::vector<Trace>& train,
                       const ModelConfig& model, const TrainConfig& config, std::mt19937_64& rng);

/// Mean-loss gradient of a batch, dropout as requested.
ModelParams batch_gradient(const ModelParams& params, const std::vector<const Trace*>& batch,
                           const ModelConfig& model, bool training, std::uint64_t seed,
                           double* mean_loss = nullptr);

double validation_auc(const ModelParams& params, const std::vector<Trace>& val,
                      const ModelConfig& model);

struct FitResult {
  ModelParams params;  // best-epoch parameters
  TrainLog log;
};

/// Called after every epoch with the record just appended; return false to
/// stop the run (recorded as pruned).
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Trains with early stopping on validation AUC and returns the parameters
/// of the best epoch. Starts from `initial` when given.
FitResult fit(const ModelConfig& model, const TrainConfig& config, const std::vector<Trace>& train,
              const std::vector<Trace>& val, std::optional<ModelParams> initial = std::nullopt,
              const EpochCallback& on_epoch = {});

/// Continues training a pretrained model (all layers trainable) on new data.
FitResult finetune(const ModelConfig& pretrained_config, const ModelParams& pretrained,
                   const ModelConfig& model, const TrainConfig& config,
                   const std::vector<Trace>& train, const std::vector<Trace>& val);

/// Header plus one "epoch,loss,val_auc[,seconds]" line per epoch.
std::string format_log(const TrainLog& log, bool include_timing = true);
void write_log(const TrainLog& log, const std::string& path, bool include_timing = true);
std::vector<EpochRecord> read_log(const std::string& path);

}  // namespace ctg
