#include "ctg/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace ctg::eval {

namespace {

struct ClassCounts {
  std::int64_t pos = 0, neg = 0;
};

ClassCounts count_classes(const std::vector<Prediction>& preds) {
  ClassCounts c;
  for (const auto& p : preds) {
    if (p.label != 0 && p.label != 1) throw EvalError("labels must be 0 or 1");
    if (!(p.score >= 0.0 && p.score <= 1.0))
      throw EvalError("score for '" + p.trace_id + "' lies outside [0, 1]");
    (p.label == 1 ? c.pos : c.neg)++;
  }
  return c;
}

ClassCounts require_both_classes(const std::vector<Prediction>& preds) {
  const auto c = count_classes(preds);
  if (c.pos == 0 || c.neg == 0)
    throw EvalError("analysis needs both classes (positives=" + std::to_string(c.pos) +
                    ", negatives=" + std::to_string(c.neg) + ")");
  return c;
}

double above(double max_score) {
  return std::nextafter(max_score, std::numeric_limits<double>::infinity());
}

// Scores sorted ascending, with the label-1 count of each distinct score.
struct Groups {
  std::vector<double> score;
  std::vector<std::int64_t> pos, neg;
};

Groups group_scores(const std::vector<Prediction>& preds) {
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(preds.size());
  for (const auto& p : preds) sorted.emplace_back(p.score, p.label);
  std::sort(sorted.begin(), sorted.end());
  Groups g;
  for (const auto& [s, l] : sorted) {
    if (g.score.empty() || g.score.back() != s) {
      g.score.push_back(s);
      g.pos.push_back(0);
      g.neg.push_back(0);
    }
    (l == 1 ? g.pos.back() : g.neg.back())++;
  }
  return g;
}

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double auc(const std::vector<Prediction>& preds) {
  const auto c = require_both_classes(preds);
  const auto g = group_scores(preds);
  // Mid-rank sum of the positives, ranks starting at 1.
  double rank_sum = 0;
  std::int64_t below = 0;
  for (std::size_t i = 0; i < g.score.size(); ++i) {
    const std::int64_t n = g.pos[i] + g.neg[i];
    const double mid = static_cast<double>(below) + (static_cast<double>(n) + 1.0) / 2.0;
    rank_sum += mid * static_cast<double>(g.pos[i]);
    below += n;
  }
  const double u = rank_sum - static_cast<double>(c.pos) * static_cast<double>(c.pos + 1) / 2.0;
  return u / (static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

std::vector<RocPoint> roc_curve(const std::vector<Prediction>& preds) {
  const auto c = require_both_classes(preds);
  const auto g = group_scores(preds);
  std::vector<RocPoint> pts;
  pts.push_back({above(g.score.back()), 0.0, 0.0});
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = g.score.size(); i-- > 0;) {
    tp += g.pos[i];
    fp += g.neg[i];
    pts.push_back({g.score[i], static_cast<double>(fp) / static_cast<double>(c.neg),
                   static_cast<double>(tp) / static_cast<double>(c.pos)});
  }
  return pts;
}

double trapezoid_auc(const std::vector<RocPoint>& points) {
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  return area;
}

Confusion confusion_at(const std::vector<Prediction>& preds, double threshold) {
  Confusion c;
  for (const auto& p : preds) {
    const bool positive = p.score >= threshold;
    if (p.label == 1)
      (positive ? c.tp : c.fn)++;
    else
      (positive ? c.fp : c.tn)++;
  }
  return c;
}

Metrics metrics(const Confusion& c) {
  Metrics m;
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.ppv = ratio(c.tp, c.tp + c.fp);
  m.npv = ratio(c.tn, c.tn + c.fn);
  if (m.ppv && m.sensitivity && (*m.ppv + *m.sensitivity) > 0)
    m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.accuracy = ratio(c.tp + c.tn, c.total());
  return m;
}

std::vector<double> candidate_thresholds(const std::vector<Prediction>& preds) {
  if (preds.empty()) throw EvalError("no predictions");
  auto g = group_scores(preds);
  g.score.push_back(above(g.score.back()));
  return g.score;
}

YoudenResult youden_threshold(const std::vector<Prediction>& preds) {
  const auto c = require_both_classes(preds);
  const auto g = group_scores(preds);
  // At cut g.score[i], everything from group i upwards is predicted positive.
  // J * P * N = tp * N + tn * P - P * N, compared exactly in integers.
  std::int64_t tp = c.pos, tn = 0;
  std::int64_t best_key = std::numeric_limits<std::int64_t>::min();
  double best_threshold = 0;
  std::int64_t best_tp = 0, best_tn = 0;
  for (std::size_t i = 0; i <= g.score.size(); ++i) {
    const std::int64_t key = tp * c.neg + tn * c.pos;
    if (key > best_key) {
      best_key = key;
      best_threshold = i < g.score.size() ? g.score[i] : above(g.score.back());
      best_tp = tp;
      best_tn = tn;
    }
    if (i < g.score.size()) {
      tp -= g.pos[i];
      tn += g.neg[i];
    }
  }
  const double j = static_cast<double>(best_tp) / static_cast<double>(c.pos) +
                   static_cast<double>(best_tn) / static_cast<double>(c.neg) - 1.0;
  return {best_threshold, j};
}

std::optional<double> target_threshold(const std::vector<Prediction>& preds, TargetKind kind,
                                       double target) {
  const auto c = require_both_classes(preds);
  const auto g = group_scores(preds);
  const std::size_t n = g.score.size();
  // Confusion counts at every candidate cut, ascending.
  std::vector<std::int64_t> tp(n + 1), tn(n + 1);
  tp[0] = c.pos;
  tn[0] = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp[i + 1] = tp[i] - g.pos[i];
    tn[i + 1] = tn[i] + g.neg[i];
  }
  auto cut = [&](std::size_t i) { return i < n ? g.score[i] : above(g.score.back()); };
  if (kind == TargetKind::high_sensitivity) {
    for (std::size_t i = n + 1; i-- > 0;)
      if (static_cast<double>(tp[i]) / static_cast<double>(c.pos) >= target) return cut(i);
  } else {
    for (std::size_t i = 0; i <= n; ++i)
      if (static_cast<double>(tn[i]) / static_cast<double>(c.neg) >= target) return cut(i);
  }
  return std::nullopt;
}

RocAnalysis analyze(const std::vector<Prediction>& preds, const AnalysisOptions& opts) {
  const auto c = require_both_classes(preds);
  RocAnalysis a;
  a.points = roc_curve(preds);
  a.auc = auc(preds);
  a.n_positive = static_cast<std::size_t>(c.pos);
  a.n_negative = static_cast<std::size_t>(c.neg);
  auto add = [&](std::string name, std::optional<double> threshold) {
    OperatingPoint op{std::move(name), threshold, {}, {}};
    if (threshold) {
      op.confusion = confusion_at(preds, *threshold);
      op.metrics = metrics(op.confusion);
    }
    a.thresholds.push_back(std::move(op));
  };
  add("default", opts.default_threshold);
  add("youden", youden_threshold(preds).threshold);
  add("high_sensitivity", target_threshold(preds, TargetKind::high_sensitivity, opts.sensitivity_target));
  add("high_specificity", target_threshold(preds, TargetKind::high_specificity, opts.specificity_target));
  return a;
}

RocAnalysis evaluate_by_dtd(const std::vector<Prediction>& preds, double max_days,
                            const AnalysisOptions& opts) {
  std::vector<Prediction> subset;
  for (const auto& p : preds)
    if (p.label == 0 || p.days_to_delivery <= max_days) subset.push_back(p);
  if (subset.empty()) throw EvalError("no predictions within " + std::to_string(max_days) + " days");
  const auto c = count_classes(subset);
  if (c.pos == 0)
    throw EvalError("no adverse cases within " + std::to_string(max_days) + " days of delivery");
  return analyze(subset, opts);
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

void write_predictions(const std::vector<Prediction>& preds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write predictions to " + path);
  out << "trace_id,score,label,days_to_delivery\n" << std::setprecision(17);
  for (const auto& p : preds)
    out << p.trace_id << ',' << p.score << ',' << p.label << ',' << p.days_to_delivery << '\n';
  if (!out) throw EvalError("write failed for " + path);
}

std::vector<Prediction> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open predictions file " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("trace_id,score,label,days_to_delivery", 0) != 0)
    throw EvalError(path + ": missing header 'trace_id,score,label,days_to_delivery'");
  std::vector<Prediction> preds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 4)
      throw EvalError(path + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(fields.size()));
    Prediction p;
    try {
      std::size_t pos = 0;
      p.trace_id = fields[0];
      p.score = std::stod(fields[1], &pos);
      if (pos != fields[1].size()) throw std::invalid_argument("score");
      p.label = std::stoi(fields[2], &pos);
      if (pos != fields[2].size()) throw std::invalid_argument("label");
      p.days_to_delivery = std::stod(fields[3], &pos);
      if (pos != fields[3].size()) throw std::invalid_argument("days_to_delivery");
    } catch (const std::exception&) {
      throw EvalError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (p.label != 0 && p.label != 1)
      throw EvalError(path + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    preds.push_back(std::move(p));
  }
  return preds;
}

std::string report_json(const RocAnalysis& a) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["auc"] = a.auc;
  j["n_positive"] = a.n_positive;
  j["n_negative"] = a.n_negative;
  j["roc_points"] = a.points.size();
  json ops = json::array();
  for (const auto& op : a.thresholds) {
    json o;
    o["name"] = op.name;
    o["threshold"] = opt(op.threshold);
    o["attainable"] = op.threshold.has_value();
    o["confusion"] = {{"tp", op.confusion.tp}, {"fp", op.confusion.fp},
                      {"tn", op.confusion.tn}, {"fn", op.confusion.fn}};
    o["metrics"] = {{"sensitivity", opt(op.metrics.sensitivity)},
                    {"specificity", opt(op.metrics.specificity)},
                    {"ppv", opt(op.metrics.ppv)},
                    {"npv", opt(op.metrics.npv)},
                    {"f1", opt(op.metrics.f1)},
                    {"accuracy", opt(op.metrics.accuracy)}};
    ops.push_back(std::move(o));
  }
  j["thresholds"] = std::move(ops);
  return j.dump(2) + "\n";
}

std::string roc_csv(const RocAnalysis& a) {
  std::ostringstream os;
  os << "threshold,fpr,tpr\n" << std::setprecision(17);
  for (const auto& p : a.points) os << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  return os.str();
}

std::string threshold_table_csv(const RocAnalysis& a) {
  std::ostringstream os;
  os << "name,threshold,tp,fp,tn,fn,sensitivity,specificity,ppv,npv,f1,accuracy\n";
  for (const auto& op : a.thresholds) {
    os << op.name << ',' << format_metric(op.threshold) << ',' << op.confusion.tp << ','
       << op.confusion.fp << ',' << op.confusion.tn << ',' << op.confusion.fn << ','
       << format_metric(op.metrics.sensitivity) << ',' << format_metric(op.metrics.specificity)
       << ',' << format_metric(op.metrics.ppv) << ',' << format_metric(op.metrics.npv) << ','
       << format_metric(op.metrics.f1) << ',' << format_metric(op.metrics.accuracy) << '\n';
  }
  return os.str();
}

}  // namespace ctg::eval
