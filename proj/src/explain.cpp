#include "dtwin/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dtwin/error.hpp"
#include "dtwin/policy.hpp"

namespace dtwin {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Most frequent value; ties go to the smallest.
template <typename T>
T mode(const std::vector<T>& v) {
  std::map<T, std::size_t> counts;
  for (const T& x : v) ++counts[x];
  T best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [value, count] : counts) {
    if (count > best_count) {
      best = value;
      best_count = count;
    }
  }
  return best;
}

}  // namespace

PatientFeatures baseline_patient(const Cohort& train) {
  if (train.empty()) throw UsageError("baseline patient needs a non-empty training cohort");
  std::vector<double> age, packs, dose, fraction;
  std::vector<Race> race;
  std::vector<Hpv> hpv;
  std::vector<Subsite> subsite;
  std::vector<int> bilateral, asp;
  std::array<std::vector<int>, kLymphNodeRegions> ln;
  for (const auto& r : train) {
    const auto& f = r.features;
    age.push_back(f.age);
    packs.push_back(f.pack_years);
    dose.push_back(f.total_dose);
    fraction.push_back(f.dose_fraction);
    race.push_back(f.race);
    hpv.push_back(f.hpv);
    subsite.push_back(f.subsite);
    bilateral.push_back(f.bilateral);
    asp.push_back(f.aspiration_pre);
    for (std::size_t i = 0; i < kLymphNodeRegions; ++i) ln[i].push_back(f.lymph_nodes[i]);
  }
  PatientFeatures b;
  b.age = median(age);
  b.male = true;
  b.race = mode(race);
  b.hpv = mode(hpv);
  b.smoking = kSmokingMin;
  b.pack_years = median(packs);
  for (std::size_t i = 0; i < kLymphNodeRegions; ++i) b.lymph_nodes[i] = mode(ln[i]) != 0;
  b.t_stage = kTStageMin;
  b.n_stage = kNStageMin;
  b.ajcc = kAjccMin;
  b.grade = kGradeMin;
  b.subsite = mode(subsite);
  b.bilateral = mode(bilateral) != 0;
  b.total_dose = median(dose);
  b.dose_fraction = median(fraction);
  b.aspiration_pre = mode(asp) != 0;
  return b;
}

StageContext baseline_context(Stage stage) {
  StageContext ctx;
  if (stage >= Stage::CC) {
    ctx.decisions[0] = false;
    ctx.post_ic = TransitionSummary{};
  }
  if (stage >= Stage::ND) {
    ctx.decisions[1] = false;
    ctx.post_cc = TransitionSummary{};
  }
  return ctx;
}

double AttributionSet::total() const {
  double s = 0.0;
  for (double v : slots) s += v;
  return s;
}

double AttributionSet::completeness_residual() const {
  return std::abs(total() - (final_probability - baseline_probability));
}

AttributionSet integrated_gradients(const ScalarModel& f, std::span<const double> x, std::span<const double> baseline,
                                    std::size_t steps, const std::vector<FeatureGroup>& groups) {
  if (steps < kMinIgSteps) {
    throw ConfigError("integrated gradients needs at least " + std::to_string(kMinIgSteps) + " steps (got " +
                      std::to_string(steps) + ")");
  }
  if (x.size() != baseline.size()) throw ShapeError("integrated gradients: input and baseline lengths differ");
  const std::size_t d = x.size();
  Tensor path = Tensor::matrix(steps, d);
  for (std::size_t j = 0; j < steps; ++j) {
    const double a = (static_cast<double>(j) + 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < d; ++i) path(j, i) = baseline[i] + a * (x[i] - baseline[i]);
  }
  AttributionSet out;
  out.steps = steps;
  {
    Graph g(false);
    Var in = g.input(path, true);
    Var y = f(g, in);
    if (y.rows() != steps || y.cols() != 1) throw ShapeError("integrated gradients: model must return [m,1]");
    g.backward(ad::sum(y));
    const Tensor& grad = in.grad();
    out.slots.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < steps; ++j) s += grad(j, i);
      out.slots[i] = (x[i] - baseline[i]) * s / static_cast<double>(steps);
    }
  }
  {
    Tensor ends = Tensor::matrix(2, d);
    std::copy(baseline.begin(), baseline.end(), ends.data().begin());
    std::copy(x.begin(), x.end(), ends.data().begin() + static_cast<std::ptrdiff_t>(d));
    Graph g(false);
    const Tensor y = f(g, g.constant(ends)).value();
    out.baseline_probability = y(0, 0);
    out.final_probability = y(1, 0);
  }
  if (groups.empty()) {
    for (std::size_t i = 0; i < d; ++i) out.features.push_back({"x" + std::to_string(i), out.slots[i]});
  } else {
    for (const auto& grp : groups) {
      double s = 0.0;
      for (std::size_t slot : grp.slots) {
        if (slot >= d) throw ShapeError("feature group " + grp.name + " refers past the input width");
        s += out.slots[slot];
      }
      out.features.push_back({grp.name, s});
    }
  }
  return out;
}

ScalarModel policy_scalar_model(const PolicyModel& model, Stage stage, Strategy strategy) {
  return [&model, stage, strategy](Graph& g, Var x) {
    const std::vector<Stage> stages(x.rows(), stage);
    return ad::sigmoid(model.forward(g, x, stages, strategy).logit);
  };
}

std::vector<WaterfallRow> aggregate_for_waterfall(const AttributionSet& attrs, double threshold) {
  std::vector<WaterfallRow> rows;
  double other = 0.0;
  bool have_other = false;
  for (const auto& a : attrs.features) {
    if (std::abs(a.value) < threshold) {
      other += a.value;
      have_other = true;
    } else {
      rows.push_back({a.name, a.value, 0.0, 0.0, false});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const WaterfallRow& a, const WaterfallRow& b) { return a.value > b.value; });
  if (have_other) rows.push_back({"other", other, 0.0, 0.0, true});
  double pos = attrs.baseline_probability;
  for (auto& r : rows) {
    r.start = pos;
    pos += r.value;
    r.end = pos;
  }
  return rows;
}

}  // namespace dtwin
