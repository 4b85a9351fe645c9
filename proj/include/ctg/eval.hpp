#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctg::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Prediction {
  std::string trace_id;
  double score = 0;  // probability of the adverse class
  int label = 0;
  double days_to_delivery = 0;
};

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

/// Ratio metrics; std::nullopt marks a zero denominator.
struct Metrics {
  std::optional<double> sensitivity, specificity, ppv, npv, f1, accuracy;
};

struct RocPoint {
  double threshold;  // predicted positive iff score >= threshold
  double fpr;
  double tpr;
};

struct OperatingPoint {
  std::string name;
  std::optional<double> threshold;  // nullopt when the target is unattainable
  Confusion confusion;
  Metrics metrics;
};

struct RocAnalysis {
  std::vector<RocPoint> points;  // from (0,0) up to (1,1)
  double auc = 0;
  std::vector<OperatingPoint> thresholds;  // default, youden, high_sensitivity, high_specificity
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
};

enum class TargetKind { high_sensitivity, high_specificity };

/// Mann-Whitney estimate P(s+ > s-) + P(s+ = s-)/2 via mid-ranks.
double auc(const std::vector<Prediction>& preds);

/// Trapezoidal area under the ROC points.
double trapezoid_auc(const std::vector<RocPoint>& points);

/// ROC points at every distinct score cut plus the cut above the maximum.
std::vector<RocPoint> roc_curve(const std::vector<Prediction>& preds);

Confusion confusion_at(const std::vector<Prediction>& preds, double threshold);

Metrics metrics(const Confusion& c);

/// Cuts considered by threshold searches: every distinct score, plus one
/// just above the maximum (everything negative). Ascending.
std::vector<double> candidate_thresholds(const std::vector<Prediction>& preds);

struct YoudenResult {
  double threshold;
  double j;
};

/// Maximises sensitivity + specificity - 1 over the candidate cuts; ties go
/// to the smaller threshold.
YoudenResult youden_threshold(const std::vector<Prediction>& preds);

/// high_sensitivity: largest cut with sensitivity >= target.
/// high_specificity: smallest cut with specificity >= target.
std::optional<double> target_threshold(const std::vector<Prediction>& preds, TargetKind kind,
                                       double target = 0.90);

struct AnalysisOptions {
  double default_threshold = 0.5;
  double sensitivity_target = 0.90;
  double specificity_target = 0.90;
};

RocAnalysis analyze(const std::vector<Prediction>& preds, const AnalysisOptions& opts = {});

/// Keeps every control and the adverse cases with days_to_delivery <=
/// max_days, then analyses the subset.
RocAnalysis evaluate_by_dtd(const std::vector<Prediction>& preds, double max_days,
                            const AnalysisOptions& opts = {});

std::string format_metric(const std::optional<double>& v);

// Comma-separated prediction records with a header row.
void write_predictions(const std::vector<Prediction>& preds, const std::string& path);
std::vector<Prediction> read_predictions(const std::string& path);

/// JSON report of an analysis (AUC, counts, four operating points).
std::string report_json(const RocAnalysis& analysis);
/// "threshold,fpr,tpr" rows for external plotting.
std::string roc_csv(const RocAnalysis& analysis);
/// One row per operating point with the six metrics.
std::string threshold_table_csv(const RocAnalysis& analysis);

}  // namespace ctg::eval
