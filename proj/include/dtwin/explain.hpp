#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtwin/autodiff.hpp"
#include "dtwin/cohort.hpp"
#include "dtwin/encoding.hpp"

namespace dtwin {

class PolicyModel;
enum class Strategy;

// Reference patient for attributions: ordinal attributes at their minimum,
// categorical attributes at the training mode, continuous attributes at the
// training median, gender male.
PatientFeatures baseline_patient(const Cohort& train);

// Context used with the baseline: every earlier decision "no", stable
// responses and no toxicity.
StageContext baseline_context(Stage stage);

// Differentiable scalar model: [m, width] -> [m, 1] in probability units.
using ScalarModel = std::function<Var(Graph&, Var)>;

inline constexpr std::size_t kMinIgSteps = 32;

struct Attribution {
  std::string name;
  double value = 0.0;
};

struct AttributionSet {
  std::vector<Attribution> features;  // grouped, in feature_groups() order
  std::vector<double> slots;          // per encoded slot
  double baseline_probability = 0.0;
  double final_probability = 0.0;
  double threshold = 0.01;
  std::size_t steps = 0;

  double total() const;
  // |sum attr - (final - baseline)|
  double completeness_residual() const;
};

// Midpoint-rule integrated gradients in an inference graph (no dropout).
// `groups` merges slots into named features; empty = one entry per slot.
AttributionSet integrated_gradients(const ScalarModel& f, std::span<const double> x, std::span<const double> baseline,
                                    std::size_t steps, const std::vector<FeatureGroup>& groups = {});

// Policy head at one stage as a probability model.
ScalarModel policy_scalar_model(const PolicyModel& model, Stage stage, Strategy strategy);

struct WaterfallRow {
  std::string name;
  double value = 0.0;
  double start = 0.0;
  double end = 0.0;
  bool other = false;
};

// Entries with |value| < threshold merge into a trailing "other" row; the
// rest are sorted by descending signed value. Positions chain from the
// baseline probability.
std::vector<WaterfallRow> aggregate_for_waterfall(const AttributionSet& attrs, double threshold = 0.01);

}  // namespace dtwin
