#include "ctg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

namespace ctg::data {

namespace {

constexpr std::size_t kLength = static_cast<std::size_t>(signal::kWindowLength);
constexpr double kSamplesPerHour = static_cast<double>(kLength);

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0) return 0;
  return std::poisson_distribution<int>(mean)(rng);
}

void add_bump(std::vector<double>& x, double centre, double width, double amplitude) {
  const double lo = std::max(0.0, centre - 4 * width);
  const double hi = std::min(static_cast<double>(x.size() - 1), centre + 4 * width);
  for (auto i = static_cast<std::size_t>(lo); i <= static_cast<std::size_t>(hi); ++i) {
    const double t = (static_cast<double>(i) - centre) / width;
    x[i] += amplitude * std::exp(-0.5 * t * t);
  }
}

void punch_gaps(std::vector<double>& x, std::mt19937_64& rng, double rate) {
  if (rate <= 0) return;
  std::uniform_int_distribution<std::size_t> gap_len(8, 40);
  std::uniform_int_distribution<std::size_t> start(0, x.size() - 1);
  const auto budget = static_cast<std::size_t>(rate * static_cast<double>(x.size()));
  std::size_t missing = 0;
  while (missing < budget) {
    const std::size_t s = start(rng);
    const std::size_t len = std::min(gap_len(rng), budget - missing);
    for (std::size_t i = s; i < std::min(x.size(), s + len); ++i) {
      if (x[i] != signal::kMissing) ++missing;
      x[i] = signal::kMissing;
    }
  }
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                     : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view field, const std::string& where) {
  double v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty())
    throw DataError(where + ": non-numeric field '" + std::string(field) + "'");
  return v;
}

int parse_label(std::string_view field, const std::string& where) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  throw DataError(where + ": label must be 0 or 1, got '" + std::string(field) + "'");
}

template <typename Fn>
void for_each_line(const std::string& path, const char* header, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind(header, 0) != 0)
    throw DataError(path + ":1: missing header '" + header + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    fn(line, path + ":" + std::to_string(lineno));
  }
}

}  // namespace

void GenSpec::validate() const {
  if (n_per_class == 0) throw DataError("n_per_class must be positive");
  auto range_ok = [](const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo < r.hi; };
  if (!range_ok(baseline_bpm) || !range_ok(npo_variability) || !range_ok(apo_variability) ||
      !range_ok(late_deceleration_depth) || !range_ok(late_deceleration_lag))
    throw DataError("generator ranges must be finite with lo < hi");
  if (baseline_bpm.lo < signal::kFhrMin || baseline_bpm.hi > signal::kFhrMax)
    throw DataError("baseline range must lie inside [50, 250] bpm");
  for (double r : {npo_acceleration_rate, apo_acceleration_rate, npo_deceleration_rate,
                   contraction_rate, missing_rate, apo_variability.lo, npo_variability.lo,
                   late_deceleration_depth.lo, late_deceleration_lag.lo})
    if (!(r >= 0)) throw DataError("generator rates must be non-negative");
  if (apo_late_deceleration_prob < 0 || apo_late_deceleration_prob > 1)
    throw DataError("late deceleration probability must lie in [0, 1]");
  if (missing_rate > 0.25) throw DataError("missing_rate above 0.25 would fail the 30% window rule");
  if (max_days_to_delivery < 0) throw DataError("max_days_to_delivery must be non-negative");
  if (drift_slope < 0 || drift_slope > 1) throw DataError("drift_slope must lie in [0, 1]");
}

double GenSpec::pattern_strength(double dtd) const {
  if (max_days_to_delivery == 0) return 1.0;
  return 1.0 - drift_slope * (1.0 - dtd / static_cast<double>(max_days_to_delivery));
}

std::size_t Cohort::count(int label) const {
  return static_cast<std::size_t>(
      std::count_if(traces.begin(), traces.end(), [&](const Trace& t) { return t.label == label; }));
}

signal::RawTrace generate_raw_trace(const GenSpec& spec, std::size_t index, int label) {
  std::mt19937_64 rng(mix(spec.seed, index));
  signal::RawTrace raw;
  raw.label = label;
  raw.trace_id = "syn" + std::to_string(spec.seed) + "-" + std::to_string(index);
  raw.days_to_delivery =
      std::uniform_int_distribution<int>(0, spec.max_days_to_delivery)(rng);
  const bool adverse = label == 1;
  const double strength = adverse ? spec.pattern_strength(raw.days_to_delivery) : 0.0;
  std::uniform_real_distribution<double> anywhere(0.0, kSamplesPerHour - 1);
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  // Uterine activity: resting tone plus contractions.
  std::vector<double> toco(kLength, 0.0);
  const double tone = std::uniform_real_distribution<double>(8, 20)(rng);
  std::vector<std::pair<double, double>> contractions;  // (peak, width)
  for (int c = poisson(rng, spec.contraction_rate); c > 0; --c) {
    const double peak = anywhere(rng);
    const double width = std::uniform_real_distribution<double>(8, 14)(rng);
    add_bump(toco, peak, width, std::uniform_real_distribution<double>(30, 60)(rng));
    contractions.emplace_back(peak, width);
  }
  for (double& v : toco) v += tone + 1.5 * unit_normal(rng);

  // Heart rate: baseline with slow wander, beat-to-beat noise and events.
  std::vector<double> fhr(kLength, 0.0);
  const double baseline = uniform(rng, spec.baseline_bpm);
  const double wander_amp = std::uniform_real_distribution<double>(2, 5)(rng);
  const double wander_period = std::uniform_real_distribution<double>(160, 480)(rng);
  const double wander_phase = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
  const double npo_sd = uniform(rng, spec.npo_variability);
  const double apo_sd = uniform(rng, spec.apo_variability);
  const double noise_sd = adverse ? (1 - strength) * npo_sd + strength * apo_sd : npo_sd;
  for (std::size_t i = 0; i < kLength; ++i)
    fhr[i] = baseline +
             wander_amp * std::sin(2 * std::numbers::pi * static_cast<double>(i) / wander_period +
                                   wander_phase) +
             noise_sd * unit_normal(rng);

  const double accel_rate = adverse ? (1 - strength) * spec.npo_acceleration_rate +
                                          strength * spec.apo_acceleration_rate
                                    : spec.npo_acceleration_rate;
  for (int a = poisson(rng, accel_rate); a > 0; --a) {
    const double centre = anywhere(rng);
    add_bump(fhr, centre, std::uniform_real_distribution<double>(4, 8)(rng),
             std::uniform_real_distribution<double>(15, 25)(rng));
  }
  if (adverse) {
    std::bernoulli_distribution occurs(spec.apo_late_deceleration_prob);
    for (const auto& [peak, width] : contractions) {
      if (!occurs(rng)) continue;
      const double lag = uniform(rng, spec.late_deceleration_lag);
      const double depth = strength * uniform(rng, spec.late_deceleration_depth);
      add_bump(fhr, peak + lag, width, -depth);
    }
  } else {
    for (int d = poisson(rng, spec.npo_deceleration_rate); d > 0; --d) {
      add_bump(fhr, anywhere(rng), std::uniform_real_distribution<double>(4, 8)(rng),
               -std::uniform_real_distribution<double>(10, 20)(rng));
    }
  }

  for (double& v : fhr) v = std::clamp(v, signal::kFhrMin, signal::kFhrMax);
  for (double& v : toco) v = std::clamp(v, signal::kTocoMin, signal::kTocoMax);
  punch_gaps(fhr, rng, spec.missing_rate);
  punch_gaps(toco, rng, spec.missing_rate);
  raw.fhr = std::move(fhr);
  raw.toco = std::move(toco);
  return raw;
}

Cohort generate_cohort(const GenSpec& spec) {
  spec.validate();
  Cohort cohort;
  cohort.provenance = "synthetic(seed=" + std::to_string(spec.seed) +
                      ", generator=v" + std::to_string(kGeneratorVersion) + ")";
  cohort.traces.reserve(2 * spec.n_per_class);
  for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
    // Classes alternate so any prefix stays balanced.
    const int label = static_cast<int>(i % 2);
    auto windows = signal::preprocess(generate_raw_trace(spec, i, label));
    if (windows.size() != 1) throw DataError("generator produced an unusable trace");
    cohort.traces.push_back(std::move(windows.front()));
  }
  return cohort;
}

double short_term_variability(const Trace& t) {
  double total = 0;
  std::size_t n = 0;
  for (Eigen::Index i = 1; i < t.length(); ++i) {
    if (!t.fhr_mask[i] || !t.fhr_mask[i - 1]) continue;
    total += std::abs(t.fhr[i] - t.fhr[i - 1]);
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n) * (signal::kFhrMax - signal::kFhrMin);
}

std::uint64_t digest(const Cohort& cohort) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : cohort.traces) {
    hash_bytes(h, t.trace_id.data(), t.trace_id.size());
    hash_bytes(h, &t.label, sizeof t.label);
    hash_bytes(h, &t.days_to_delivery, sizeof t.days_to_delivery);
    hash_bytes(h, t.fhr.data(), sizeof(double) * static_cast<std::size_t>(t.fhr.size()));
    hash_bytes(h, t.toco.data(), sizeof(double) * static_cast<std::size_t>(t.toco.size()));
    for (Eigen::Index i = 0; i < t.length(); ++i) {
      const unsigned char m = static_cast<unsigned char>(t.fhr_mask[i]) |
                              static_cast<unsigned char>(t.toco_mask[i] << 1);
      hash_bytes(h, &m, 1);
    }
  }
  return h;
}

std::string digest_hex(const Cohort& cohort) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << digest(cohort);
  return os.str();
}

void write_cohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write cohort to " + path);
  out << kCohortHeader << " length=" << (cohort.traces.empty() ? 0 : cohort.traces[0].length())
      << '\n';
  out << std::setprecision(17);
  for (const auto& t : cohort.traces) {
    out << t.trace_id << ',' << t.label << ',' << t.days_to_delivery;
    for (Eigen::Index i = 0; i < t.length(); ++i)
      out << ',' << (t.fhr_mask[i] ? t.fhr[i] : signal::kMissing);
    for (Eigen::Index i = 0; i < t.length(); ++i)
      out << ',' << (t.toco_mask[i] ? t.toco[i] : signal::kMissing);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

Cohort read_cohort(const std::string& path, Eigen::Index length) {
  Cohort cohort;
  cohort.provenance = "file(" + path + ")";
  const auto expected = static_cast<std::size_t>(3 + 2 * length);
  for_each_line(path, kCohortHeader, [&](const std::string& line, const std::string& where) {
    const auto fields = split_fields(line);
    if (fields.size() != expected)
      throw DataError(where + ": expected " + std::to_string(expected) + " fields (id, label, dtd, " +
                      std::to_string(length) + " FHR and " + std::to_string(length) +
                      " TOCO values), got " + std::to_string(fields.size()));
    Trace t;
    t.trace_id = std::string(fields[0]);
    if (t.trace_id.empty()) throw DataError(where + ": empty trace id");
    t.label = parse_label(fields[1], where);
    t.days_to_delivery = parse_double(fields[2], where);
    if (!(t.days_to_delivery >= 0)) throw DataError(where + ": days_to_delivery must be >= 0");
    auto channel = [&](std::size_t offset, Eigen::VectorXd& values, Mask& mask) {
      values = Eigen::VectorXd::Zero(length);
      mask = Mask::Constant(length, false);
      for (Eigen::Index i = 0; i < length; ++i) {
        const double v = parse_double(fields[offset + static_cast<std::size_t>(i)], where);
        if (v == signal::kMissing) continue;
        if (!(v >= 0.0 && v <= 1.0))
          throw DataError(where + ": value " + std::to_string(v) + " outside [0, 1]");
        values[i] = v;
        mask[i] = true;
      }
    };
    channel(3, t.fhr, t.fhr_mask);
    channel(3 + static_cast<std::size_t>(length), t.toco, t.toco_mask);
    cohort.traces.push_back(std::move(t));
  });
  validate_cohort(cohort);
  return cohort;
}

void write_raw_traces(const std::vector<signal::RawTrace>& traces, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write raw traces to " + path);
  out << kRawHeader << '\n' << std::setprecision(17);
  for (const auto& t : traces) {
    out << t.trace_id << ',' << t.label << ',' << t.days_to_delivery;
    for (double v : t.fhr) out << ',' << v;
    for (double v : t.toco) out << ',' << v;
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

std::vector<signal::RawTrace> read_raw_traces(const std::string& path) {
  std::vector<signal::RawTrace> traces;
  for_each_line(path, kRawHeader, [&](const std::string& line, const std::string& where) {
    const auto fields = split_fields(line);
    if (fields.size() < 5 || (fields.size() - 3) % 2 != 0)
      throw DataError(where + ": expected id, label, dtd and two equal-length channels");
    signal::RawTrace t;
    t.trace_id = std::string(fields[0]);
    t.label = parse_label(fields[1], where);
    t.days_to_delivery = parse_double(fields[2], where);
    const std::size_t n = (fields.size() - 3) / 2;
    for (std::size_t i = 0; i < n; ++i) t.fhr.push_back(parse_double(fields[3 + i], where));
    for (std::size_t i = 0; i < n; ++i) t.toco.push_back(parse_double(fields[3 + n + i], where));
    try {
      signal::validate(t);
    } catch (const signal::SignalError& e) {
      throw DataError(where + ": " + e.what());
    }
    traces.push_back(std::move(t));
  });
  return traces;
}

void validate_cohort(const Cohort& cohort) {
  std::unordered_set<std::string> ids;
  for (const auto& t : cohort.traces) {
    if (t.label != 0 && t.label != 1) throw DataError("trace '" + t.trace_id + "' has a non-binary label");
    if (!ids.insert(t.trace_id).second) throw DataError("duplicate trace id '" + t.trace_id + "'");
  }
}

std::pair<Cohort, Cohort> split(const Cohort& cohort, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw DataError("split fraction must lie in (0, 1)");
  std::vector<std::size_t> first_idx;
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cohort.traces.size(); ++i)
      if (cohort.traces[i].label == label) idx.push_back(i);
    if (idx.size() < 2)
      throw DataError("class " + std::to_string(label) + " has fewer than 2 traces; cannot split");
    std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    k = std::clamp<std::size_t>(k, 1, idx.size() - 1);
    first_idx.insert(first_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::vector<bool> in_first(cohort.traces.size(), false);
  for (std::size_t i : first_idx) in_first[i] = true;
  Cohort a, b;
  a.provenance = cohort.provenance + "/split(" + std::to_string(fraction) + ",seed=" + std::to_string(seed) + ",first)";
  b.provenance = cohort.provenance + "/split(" + std::to_string(fraction) + ",seed=" + std::to_string(seed) + ",second)";
  for (std::size_t i = 0; i < cohort.traces.size(); ++i)
    (in_first[i] ? a : b).traces.push_back(cohort.traces[i]);
  return {std::move(a), std::move(b)};
}

Cohort filter_dtd(const Cohort& cohort, double min_days, double max_days) {
  if (!(min_days >= 0) || !(max_days >= min_days))
    throw DataError("days-to-delivery band must satisfy 0 <= min <= max");
  Cohort out;
  out.provenance = cohort.provenance + "/dtd[" + std::to_string(min_days) + "," + std::to_string(max_days) + "]";
  std::size_t adverse = 0;
  for (const auto& t : cohort.traces) {
    const bool keep = t.label == 0 || (t.days_to_delivery >= min_days && t.days_to_delivery <= max_days);
    if (!keep) continue;
    adverse += static_cast<std::size_t>(t.label == 1);
    out.traces.push_back(t);
  }
  if (adverse == 0)
    throw DataError("no adverse traces within days-to-delivery band [" + std::to_string(min_days) +
                    ", " + std::to_string(max_days) + "]");
  return out;
}

}  // namespace ctg::data
