#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtwin/cohort.hpp"
#include "dtwin/survival.hpp"
#include "dtwin/tensor.hpp"

namespace dtwin {

// Rank-statistic AUC, tied scores get half credit. nullopt when only one
// class is present.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

struct BinaryMetrics {
  std::optional<double> auc;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
};

// Accuracy and F1 threshold the score at `threshold` (label 1 = positive).
BinaryMetrics binary_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct MulticlassAuc {
  double micro = 0.0;
  double weighted = 0.0;
  std::vector<std::size_t> absent_classes;  // left out of the weighted mean
};

// scores: [n, classes]; labels index columns.
MulticlassAuc multiclass_auc(const Tensor& scores, std::span<const std::size_t> labels);

inline constexpr double kReportHorizons[] = {12.0, 24.0, 36.0, 48.0};

struct HorizonMetrics {
  double horizon = 0.0;
  std::optional<double> auc;  // score 1 - S(h) against event-by-h
  double f1 = 0.0;            // positive class = event-free at h, predicted when S(h) >= 0.5
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // censored before the horizon
};

// Records censored before the horizon are excluded.
HorizonMetrics horizon_metrics(std::span<const double> survival_at_horizon, std::span<const EndpointOutcome> outcomes,
                               double horizon);
HorizonMetrics horizon_metrics(std::span<const LogNormalMixture> curves, std::span<const EndpointOutcome> outcomes,
                               double horizon);

// Flat metric table: one row per model/output/metric.
struct MetricRow {
  std::string model;
  std::string output;
  std::string metric;
  std::optional<double> value;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(std::string model, std::string output, std::string metric, std::optional<double> value);
  void add_binary(const std::string& model, const std::string& output, const BinaryMetrics& m);
  const MetricRow* find(const std::string& model, const std::string& output, const std::string& metric) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

}  // namespace dtwin
