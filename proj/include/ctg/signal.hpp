#pragma once

#include <Eigen/Core>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctg {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// One preprocessed window: two unit-scaled channels plus their observation
/// masks. Masked samples hold 0.
struct Trace {
  Eigen::VectorXd fhr;
  Eigen::VectorXd toco;
  Mask fhr_mask;
  Mask toco_mask;
  int label = 0;  // 1 = adverse outcome
  double days_to_delivery = 0;
  std::string trace_id;
  int window_index = 0;

  Eigen::Index length() const { return fhr.size(); }
};

namespace signal {

inline constexpr Eigen::Index kWindowLength = 960;
inline constexpr double kMissing = -1.0;
inline constexpr double kFhrMin = 50.0;
inline constexpr double kFhrMax = 250.0;
inline constexpr double kTocoMin = 0.0;
inline constexpr double kTocoMax = 100.0;
inline constexpr double kMaxMissingFraction = 0.30;

class SignalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A recording in physical units: FHR in beats/minute, TOCO in relative
/// units; -1 marks a missing sample in either channel.
struct RawTrace {
  std::vector<double> fhr;
  std::vector<double> toco;
  int label = 0;
  double days_to_delivery = 0;
  std::string trace_id;
};

struct MaskedWindow {
  Eigen::VectorXd values;
  Mask mask;
};

/// Throws SignalError unless both channels have equal non-zero length and
/// every sample is the -1 sentinel or a finite non-negative value.
void validate(const RawTrace& raw);

/// Clamps observed FHR to [50, 250] and TOCO to [0, 100].
RawTrace clip_ranges(RawTrace raw);

/// Maps FHR by (v - 50) / 200 and TOCO by v / 100. Sentinels pass through.
RawTrace scale_unit(RawTrace raw);

/// Pads `window` to `length` samples; the mask is false on sentinels and on
/// padding, and masked values are set to 0.
MaskedWindow build_mask(std::span<const double> window, Eigen::Index length = kWindowLength);

/// Splits a scaled trace into consecutive 960-sample windows, right-padding
/// the last one. Windows whose real FHR samples are more than 30% missing
/// are dropped. A source longer than one window gives ids "<id>/w<k>".
std::vector<Trace> window_pad(const RawTrace& scaled);

/// validate -> clip_ranges -> scale_unit -> window_pad.
std::vector<Trace> preprocess(const RawTrace& raw);

/// Inverse of scale_unit for one window (masked samples become -1).
RawTrace to_raw(const Trace& trace);

/// Checks the preprocessed-window invariants for a given length.
void validate_trace(const Trace& trace, Eigen::Index length = kWindowLength);

double missing_fraction(const Mask& mask);

}  // namespace signal
}  // namespace ctg
