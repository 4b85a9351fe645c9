#include "ctg/signal.hpp"

#include <algorithm>
#include <cmath>

namespace ctg::signal {

namespace {

void check_channel(const std::vector<double>& values, const char* name, const std::string& id) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (v == kMissing) continue;
    if (!std::isfinite(v) || v < 0)
      throw SignalError("trace '" + id + "': " + name + " sample " + std::to_string(i) +
                        " is neither -1 nor a finite non-negative value");
  }
}

void clamp_channel(std::vector<double>& values, double lo, double hi) {
  for (double& v : values)
    if (v != kMissing) v = std::clamp(v, lo, hi);
}

void scale_channel(std::vector<double>& values, double lo, double hi, const char* name) {
  for (double& v : values) {
    if (v == kMissing) continue;
    if (v < lo || v > hi)
      throw SignalError(std::string(name) + " value " + std::to_string(v) +
                        " outside its clipped range; run clip_ranges first");
    v = (v - lo) / (hi - lo);
  }
}

}  // namespace

void validate(const RawTrace& raw) {
  if (raw.fhr.empty()) throw SignalError("trace '" + raw.trace_id + "' is empty");
  if (raw.fhr.size() != raw.toco.size())
    throw SignalError("trace '" + raw.trace_id + "': FHR and TOCO lengths differ (" +
                      std::to_string(raw.fhr.size()) + " vs " + std::to_string(raw.toco.size()) +
                      ")");
  if (raw.label != 0 && raw.label != 1)
    throw SignalError("trace '" + raw.trace_id + "': label must be 0 or 1");
  if (!std::isfinite(raw.days_to_delivery) || raw.days_to_delivery < 0)
    throw SignalError("trace '" + raw.trace_id + "': days_to_delivery must be non-negative");
  check_channel(raw.fhr, "FHR", raw.trace_id);
  check_channel(raw.toco, "TOCO", raw.trace_id);
}

RawTrace clip_ranges(RawTrace raw) {
  validate(raw);
  clamp_channel(raw.fhr, kFhrMin, kFhrMax);
  clamp_channel(raw.toco, kTocoMin, kTocoMax);
  return raw;
}

RawTrace scale_unit(RawTrace raw) {
  scale_channel(raw.fhr, kFhrMin, kFhrMax, "FHR");
  scale_channel(raw.toco, kTocoMin, kTocoMax, "TOCO");
  return raw;
}

MaskedWindow build_mask(std::span<const double> window, Eigen::Index length) {
  if (static_cast<Eigen::Index>(window.size()) > length)
    throw SignalError("window longer than " + std::to_string(length) + " samples");
  MaskedWindow out{Eigen::VectorXd::Zero(length), Mask::Constant(length, false)};
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (window[i] == kMissing) continue;
    out.values[static_cast<Eigen::Index>(i)] = window[i];
    out.mask[static_cast<Eigen::Index>(i)] = true;
  }
  return out;
}

std::vector<Trace> window_pad(const RawTrace& scaled) {
  if (scaled.fhr.empty()) throw SignalError("cannot window an empty trace");
  if (scaled.fhr.size() != scaled.toco.size())
    throw SignalError("trace '" + scaled.trace_id + "': FHR and TOCO lengths differ");
  const std::size_t total = scaled.fhr.size();
  const auto step = static_cast<std::size_t>(kWindowLength);
  std::vector<Trace> windows;
  int index = 0;
  for (std::size_t start = 0; start < total; start += step, ++index) {
    const std::size_t len = std::min(step, total - start);
    std::span<const double> fhr(scaled.fhr.data() + start, len);
    std::span<const double> toco(scaled.toco.data() + start, len);
    const auto missing = std::count(fhr.begin(), fhr.end(), kMissing);
    if (static_cast<double>(missing) / static_cast<double>(len) > kMaxMissingFraction) continue;
    auto f = build_mask(fhr);
    auto t = build_mask(toco);
    Trace w;
    w.fhr = std::move(f.values);
    w.fhr_mask = std::move(f.mask);
    w.toco = std::move(t.values);
    w.toco_mask = std::move(t.mask);
    w.label = scaled.label;
    w.days_to_delivery = scaled.days_to_delivery;
    w.trace_id = total > step ? scaled.trace_id + "/w" + std::to_string(index) : scaled.trace_id;
    w.window_index = index;
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<Trace> preprocess(const RawTrace& raw) {
  return window_pad(scale_unit(clip_ranges(raw)));
}

RawTrace to_raw(const Trace& trace) {
  RawTrace raw;
  raw.label = trace.label;
  raw.days_to_delivery = trace.days_to_delivery;
  raw.trace_id = trace.trace_id;
  const auto n = static_cast<std::size_t>(trace.length());
  raw.fhr.resize(n);
  raw.toco.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    raw.fhr[i] = trace.fhr_mask[k] ? kFhrMin + trace.fhr[k] * (kFhrMax - kFhrMin) : kMissing;
    raw.toco[i] = trace.toco_mask[k] ? kTocoMin + trace.toco[k] * (kTocoMax - kTocoMin) : kMissing;
  }
  return raw;
}

void validate_trace(const Trace& trace, Eigen::Index length) {
  const auto fail = [&](const std::string& what) {
    throw SignalError("trace '" + trace.trace_id + "': " + what);
  };
  if (trace.fhr.size() != length || trace.toco.size() != length ||
      trace.fhr_mask.size() != length || trace.toco_mask.size() != length)
    fail("expected " + std::to_string(length) + " samples per channel");
  if (trace.label != 0 && trace.label != 1) fail("label must be 0 or 1");
  for (Eigen::Index i = 0; i < length; ++i) {
    for (const auto& [v, m] : {std::pair{trace.fhr[i], trace.fhr_mask[i]},
                               std::pair{trace.toco[i], trace.toco_mask[i]}}) {
      if (!m && v != 0.0) fail("masked sample " + std::to_string(i) + " is not zero");
      if (m && !(v >= 0.0 && v <= 1.0)) fail("sample " + std::to_string(i) + " outside [0, 1]");
    }
  }
}

double missing_fraction(const Mask& mask) {
  if (mask.size() == 0) return 0.0;
  return 1.0 - static_cast<double>(mask.count()) / static_cast<double>(mask.size());
}

}  // namespace ctg::signal
