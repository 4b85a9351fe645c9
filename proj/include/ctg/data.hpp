#pragma once

#include "ctg/signal.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctg::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kGeneratorVersion = 1;
inline constexpr const char* kCohortHeader = "# patchctg-cohort v1";
inline constexpr const char* kRawHeader = "# patchctg-raw v1";

struct Range {
  double lo = 0;
  double hi = 0;
};

/// Parameters of the synthetic CTG generator. Rates are per hour of
/// recording; times are in samples (16 per minute).
struct GenSpec {
  std::size_t n_per_class = 100;
  std::uint64_t seed = 1;
  Range baseline_bpm{110, 160};
  Range npo_variability{5.0, 9.0};   // beat-to-beat noise s.d., bpm
  Range apo_variability{1.5, 3.5};
  double npo_acceleration_rate = 4.0;
  double apo_acceleration_rate = 1.0;
  double npo_deceleration_rate = 0.5;  // sporadic, uncoupled from contractions
  double contraction_rate = 4.0;
  double apo_late_deceleration_prob = 0.9;  // per contraction
  Range late_deceleration_depth{15, 30};    // bpm at full strength
  Range late_deceleration_lag{8, 16};       // samples after the contraction peak
  double missing_rate = 0.03;
  int max_days_to_delivery = 7;  // dtd drawn uniformly from {0..max}
  // Adverse-pattern strength is 1 - drift_slope * (1 - dtd / max_days): the
  // closer to delivery, the closer an adverse trace looks to a normal one.
  double drift_slope = 0.6;

  void validate() const;
  double pattern_strength(double days_to_delivery) const;
};

struct Cohort {
  std::vector<Trace> traces;
  std::string provenance;

  std::size_t count(int label) const;
};

Cohort generate_cohort(const GenSpec& spec);
/// Raw (physical-unit) trace as emitted by the generator for index `i`.
signal::RawTrace generate_raw_trace(const GenSpec& spec, std::size_t index, int label);

/// Mean absolute successive difference of observed FHR samples, in bpm.
double short_term_variability(const Trace& trace);

/// FNV-1a digest over ids, labels, dtd, masks and value bits.
std::uint64_t digest(const Cohort& cohort);
std::string digest_hex(const Cohort& cohort);

void write_cohort(const Cohort& cohort, const std::string& path);
Cohort read_cohort(const std::string& path, Eigen::Index length = signal::kWindowLength);

void write_raw_traces(const std::vector<signal::RawTrace>& traces, const std::string& path);
std::vector<signal::RawTrace> read_raw_traces(const std::string& path);

/// Label-stratified split; each class sends round(fraction * n) traces (at
/// least one, at most n - 1) to the first part.
std::pair<Cohort, Cohort> split(const Cohort& cohort, double fraction, std::uint64_t seed);

/// Keeps every control and the adverse traces with min_days <= dtd <=
/// max_days. Throws if no adverse trace remains.
Cohort filter_dtd(const Cohort& cohort, double min_days, double max_days);

/// Throws unless labels are binary and trace ids are unique.
void validate_cohort(const Cohort& cohort);

}  // namespace ctg::data
