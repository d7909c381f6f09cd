#include "dtwin/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "dtwin/error.hpp"

namespace dtwin {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

namespace {

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double denom = static_cast<double>(2 * tp + fp + fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

}  // namespace

BinaryMetrics binary_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw ShapeError("binary_metrics: scores and labels differ in length");
  if (scores.empty()) throw UsageError("binary_metrics: no records");
  BinaryMetrics m;
  m.count = scores.size();
  m.auc = roc_auc(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] == 1;
    correct += pred == pos;
    tp += pred && pos;
    fp += pred && !pos;
    fn += !pred && pos;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
  m.f1 = f1_score(tp, fp, fn);
  return m;
}

MulticlassAuc multiclass_auc(const Tensor& scores, std::span<const std::size_t> labels) {
  if (scores.rows() != labels.size()) throw ShapeError("multiclass_auc: one label per score row required");
  const std::size_t k = scores.cols();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t l : labels) {
    if (l >= k) throw DomainError("multiclass_auc: label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw UsageError("multiclass_auc needs at least two classes present");
  }
  MulticlassAuc out;
  std::vector<double> flat_scores;
  std::vector<int> flat_labels;
  flat_scores.reserve(scores.size());
  flat_labels.reserve(scores.size());
  double weighted = 0.0;
  std::size_t weight_total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> s(labels.size());
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = scores(i, c);
      y[i] = labels[i] == c ? 1 : 0;
    }
    flat_scores.insert(flat_scores.end(), s.begin(), s.end());
    flat_labels.insert(flat_labels.end(), y.begin(), y.end());
    if (counts[c] == 0) {
      out.absent_classes.push_back(c);
      continue;
    }
    weighted += static_cast<double>(counts[c]) * *roc_auc(s, y);
    weight_total += counts[c];
  }
  out.weighted = weighted / static_cast<double>(weight_total);
  out.micro = *roc_auc(flat_scores, flat_labels);
  return out;
}

HorizonMetrics horizon_metrics(std::span<const double> survival_at_horizon, std::span<const EndpointOutcome> outcomes,
                               double horizon) {
  if (!(horizon > 0.0)) throw DomainError("horizon must be > 0 months");
  if (survival_at_horizon.size() != outcomes.size()) throw ShapeError("horizon_metrics: one curve per record required");
  HorizonMetrics m;
  m.horizon = horizon;
  std::vector<double> risk;
  std::vector<int> event;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    const bool event_by_h = o.event && o.months <= horizon;
    if (!event_by_h && o.months < horizon) {
      ++m.excluded;
      continue;
    }
    const double s = survival_at_horizon[i];
    risk.push_back(1.0 - s);
    event.push_back(event_by_h ? 1 : 0);
    const bool pred_survive = s >= 0.5;
    const bool survived = !event_by_h;
    tp += pred_survive && survived;
    fp += pred_survive && !survived;
    fn += !pred_survive && survived;
  }
  if (risk.empty()) throw UsageError("no evaluable records at horizon " + std::to_string(horizon) + " months");
  m.evaluated = risk.size();
  m.auc = roc_auc(risk, event);
  m.f1 = f1_score(tp, fp, fn);
  return m;
}

HorizonMetrics horizon_metrics(std::span<const LogNormalMixture> curves, std::span<const EndpointOutcome> outcomes,
                               double horizon) {
  if (!(horizon > 0.0)) throw DomainError("horizon must be > 0 months");
  std::vector<double> s;
  s.reserve(curves.size());
  for (const auto& c : curves) s.push_back(c.survival(horizon));
  return horizon_metrics(s, outcomes, horizon);
}

void MetricReport::add(std::string model, std::string output, std::string metric, std::optional<double> value) {
  rows.push_back({std::move(model), std::move(output), std::move(metric), value});
}

void MetricReport::add_binary(const std::string& model, const std::string& output, const BinaryMetrics& m) {
  add(model, output, "auc", m.auc);
  add(model, output, "accuracy", m.accuracy);
  add(model, output, "f1", m.f1);
}

const MetricRow* MetricReport::find(const std::string& model, const std::string& output,
                                    const std::string& metric) const {
  for (const auto& r : rows) {
    if (r.model == model && r.output == output && r.metric == metric) return &r;
  }
  return nullptr;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : rows) {
    j[r.model][r.output][r.metric] = r.value ? nlohmann::json(*r.value) : nlohmann::json(nullptr);
  }
  return j;
}

std::string MetricReport::to_text() const {
  std::size_t wm = 5, wo = 6, wk = 6;
  for (const auto& r : rows) {
    wm = std::max(wm, r.model.size());
    wo = std::max(wo, r.output.size());
    wk = std::max(wk, r.metric.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(wm + 2)) << "model" << std::setw(static_cast<int>(wo + 2)) << "output"
     << std::setw(static_cast<int>(wk + 2)) << "metric" << "value\n";
  for (const auto& r : rows) {
    os << std::setw(static_cast<int>(wm + 2)) << r.model << std::setw(static_cast<int>(wo + 2)) << r.output
       << std::setw(static_cast<int>(wk + 2)) << r.metric;
    if (r.value) {
      os << std::fixed << std::setprecision(3) << *r.value;
    } else {
      os << "n/a";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dtwin
