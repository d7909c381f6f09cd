// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "dtwin/api.hpp"
#include "dtwin/engine.hpp"
#include "dtwin/evaluation.hpp"
#include "dtwin/explain.hpp"
#include "dtwin/losses.hpp"
#include "dtwin/neighbors.hpp"
#include "dtwin/policy.hpp"
#include "dtwin/random.hpp"
#include "dtwin/simulator.hpp"
#include "dtwin/synthetic.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace dtwin;
using dtwin::testing::gradcheck;
using dtwin::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor gaussian_points(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  Tensor t = Tensor::matrix(n, d);
  for (double& v : t.data()) v = standard_normal(rng);
  return t;
}

// Outcomes are additive in the decisions; medians scale multiplicatively.
// Per treatment: IC adds .1 FT and .02 to each post-IC DLT (cost .2) and
// doubles medians; CC adds .2 FT, .05 aspiration and .03 to each post-CC DLT
// (cost .4) and quadruples medians; ND adds .1 FT and scales medians by 1.25.
class AdditiveStub : public PatientSimulator {
 public:
  static std::array<double, kEndpoints> base_medians(int t_stage) {
    switch (t_stage) {
      case 1: return {100.0, 100.0, 100.0};
      case 3: return {1.0, 1.0, 2.0};
      default: return {2.0, 4.0, 4.0};
    }
  }

  std::vector<Trajectory> rollout_batch(std::span<const PatientFeatures> patients,
                                        std::span<const TreatmentSequence> sequences) const override {
    std::vector<Trajectory> out;
    for (std::size_t i = 0; i < patients.size(); ++i) {
      const auto& s = sequences[i];
      Trajectory t;
      t.sequence = s;
      t.p_feeding_tube = 0.1 + 0.1 * s.ic() + 0.2 * s.cc() + 0.1 * s.nd();
      t.p_aspiration = 0.05 + 0.05 * s.cc();
      t.post_ic.dlt.fill(0.02 * s.ic());
      t.post_cc.dlt.fill(0.03 * s.cc());
      const double scale = (s.ic() ? 2.0 : 1.0) * (s.cc() ? 4.0 : 1.0) * (s.nd() ? 1.25 : 1.0);
      const auto base = base_medians(patients[i].t_stage);
      for (std::size_t o = 0; o < kEndpoints; ++o) t.median_months[o] = base[o] * scale;
      out.push_back(t);
    }
    return out;
  }
};

// 1. Reverse-mode gradients against central differences for every layer kind.
Verdict gradient_correctness() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  double worst = 0.0;
  std::string worst_name;
  auto record = [&](const std::string& kind, const dtwin::testing::GradCheckResult& r) {
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = kind + " " + r.worst;
    }
  };

  ParameterSet ps;
  Parameter& x = ps.add("x", random_tensor(4, 6, rng));
  Parameter& y = ps.add("y", random_tensor(4, 6, rng, 2.0));
  Parameter& k = ps.add("k", random_tensor(5, 6, rng));
  Parameter& val = ps.add("v", random_tensor(5, 6, rng));
  const Tensor proj = random_tensor(6, 1, rng);
  auto reduce = [&](Graph& g, Var a) { return ad::sum(ad::matmul(a, g.constant(proj))); };
  Linear lin(ps, "lin", 6, 6, rng);
  LayerNorm ln(ps, "ln", 6);
  ps.get("ln.gamma").value = random_tensor(1, 6, rng);

  record("linear", gradcheck(ps, [&](Graph& g) { return reduce(g, lin(g, g.param(x))); }));
  record("relu", gradcheck(ps, [&](Graph& g) { return reduce(g, ad::relu(g.param(y))); }));
  record("sigmoid", gradcheck(ps, [&](Graph& g) { return reduce(g, ad::sigmoid(g.param(y))); }));
  record("softmax", gradcheck(ps, [&](Graph& g) {
           return ad::add(reduce(g, ad::softmax(g.param(y))), reduce(g, ad::log_softmax(g.param(x))));
         }));
  record("layer_norm", gradcheck(ps, [&](Graph& g) { return ad::sum(ad::square(reduce(g, ln(g, g.param(y))))); }));
  record("attention", gradcheck(ps, [&](Graph& g) {
           return reduce(g, multi_head_attention(g.param(x), g.param(k), g.param(val), 2).output);
         }));
  record("survival_primitives", gradcheck(ps, [&](Graph& g) {
           Var a = reduce(g, ad::normal_log_sf(g.param(y)));
           Var b = ad::sum(ad::logsumexp(g.param(x)));
           return ad::add(ad::add(a, b), reduce(g, ad::softplus(g.param(y))));
         }));
  record("elementwise", gradcheck(ps, [&](Graph& g) {
           Var a = g.param(x), b = g.param(y);
           std::vector<Var> parts{ad::slice_cols(a, 1, 3), ad::slice_cols(b, 0, 3)};
           Var c = ad::concat_cols(parts);
           std::vector<Var> rows{c, ad::slice_rows(c, 1, 2)};
           Var d = ad::concat_rows(rows);
           const std::size_t idx[] = {0, 3, 3, 5};
           Var e = ad::gather_rows(d, idx);
           Var f = ad::div(ad::mul(e, ad::transpose(ad::transpose(e))), ad::add_scalar(ad::exp(e), 1.0));
           Var h = ad::sub(ad::add(ad::tanh(b), a), ad::scale(ad::mean_rows(b), 0.5));
           return ad::add(ad::sum(ad::sqrt(ad::add_scalar(ad::square(f), 1.0))), reduce(g, h));
         }));
  {
    const Tensor logits = random_tensor(6, 3, rng, 2.0);
    const Tensor targets = one_hot({0, 2, 1, 1, 0, 2}, 3);
    Tensor labels = Tensor::matrix(6, 3);
    for (double& l : labels.data()) l = bernoulli(rng, 0.5);
    ParameterSet lp;
    Parameter& z = lp.add("z", logits);
    Parameter& a = lp.add("a", random_tensor(6, 4, rng));
    Parameter& b = lp.add("b", random_tensor(6, 4, rng));
    Parameter& c = lp.add("c", random_tensor(6, 4, rng));
    record("losses", gradcheck(lp, [&](Graph& g) {
             Var ce = cross_entropy(g.param(z), g.constant(targets));
             Var bce = bce_with_logits(g.param(z), g.constant(labels));
             Var tri = ad::sum(triplet_margin(g.param(a), g.param(b), g.param(c), 1.0));
             return ad::add(ad::add(ce, bce), tri);
           }));
  }
  {
    ParameterSet bps;
    Parameter& z = bps.add("z", random_tensor(5, 3, rng, 2.0));
    BatchNorm bn(bps, "bn", 3);
    bps.get("bn.gamma").value = random_tensor(1, 3, rng);
    const Tensor p3 = random_tensor(3, 1, rng);
    record("batch_norm", gradcheck(
                             bps,
                             [&](Graph& g) {
                               return ad::sum(ad::square(ad::matmul(bn(g, g.param(z)), g.constant(p3))));
                             },
                             1e-5, true));
  }
  // Whole models use h = 1e-4: with losses near 40 the roundoff of central
  // differences at 1e-5 is ~1e-10, the size of their smallest gradients.
  const Cohort cohort = generate_synthetic_cohort(3, 40);
  const auto enc = FeatureEncoder::fit(cohort);
  {
    SimulatorConfig cfg = dtwin::testing::small_simulator_config();
    cfg.survival_hidden = 6;
    SurvivalModel model(cfg, 5);
    const Cohort few(cohort.begin(), cohort.begin() + 6);
    const Tensor xs = enc.encode_rows_full(few);
    const Tensor ds = decision_matrix(few);
    Tensor times = Tensor::matrix(few.size(), kEndpoints), events = Tensor::matrix(few.size(), kEndpoints);
    for (std::size_t i = 0; i < few.size(); ++i) {
      for (std::size_t e = 0; e < kEndpoints; ++e) {
        times(i, e) = few[i].outcome.endpoints[e].months;
        events(i, e) = few[i].outcome.endpoints[e].event;
      }
    }
    record("survival_mixture_nll", gradcheck(model.params(), [&](Graph& g) {
             return SurvivalModel::negative_log_likelihood(g, model.forward(g, g.constant(xs), g.constant(ds)), times,
                                                           events);
           }, 1e-4));
  }
  {
    PolicyConfig pc;
    pc.width = 8;
    pc.ffn_width = 8;
    pc.heads = 2;
    pc.head_hidden = 4;
    PolicyModel model(pc, enc, cohort, 9);
    const Cohort few(cohort.begin(), cohort.begin() + 3);
    const Tensor xs = enc.encode_rows(few, Stage::CC);
    const std::vector<Stage> stages(few.size(), Stage::CC);
    record("policy_transformer", gradcheck(model.params(), [&](Graph& g) {
             return ad::sum(model.forward(g, g.constant(xs), stages, Strategy::Imitation).logit);
           }, 1e-4));
  }
  const double secs = seconds_since(t0);
  v.detail << "max relative error " << worst << " (" << worst_name << "), " << secs << " s";
  v.require(worst <= 1e-4, "relative error <= 1e-4");
  v.require(secs < 60.0, "runtime < 1 min");
  return v;
}

// 2. Integrated-gradient completeness.
Verdict ig_completeness() {
  Verdict v;
  const Cohort c = generate_synthetic_cohort(21);
  const auto split = stratified_split(c, 21);
  const auto enc = FeatureEncoder::fit(split.train);
  const auto labels = compute_optimal_labels(AdditiveStub{}, split.train, OptimalObjectiveWeights{});
  PolicyConfig pc;
  pc.width = 32;
  pc.ffn_width = 32;
  pc.train.max_epochs = 15;
  std::mt19937_64 rng(21);
  double worst = 0.0;
  std::size_t heads = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PolicyModel model = PolicyModel::fit(split.train, enc, labels, pc, seed);
    for (Strategy s : {Strategy::Imitation, Strategy::Optimal}) {
      const auto stage = static_cast<Stage>(uniform_index(rng, kStages));
      const Tensor x = enc.encode_rows(split.eval, stage);
      const auto xi = x.row_vector(uniform_index(rng, x.rows()));
      const auto xb = x.row_vector(uniform_index(rng, x.rows()));
      const auto a = integrated_gradients(policy_scalar_model(model, stage, s), xi, xb, 512, feature_groups());
      worst = std::max(worst, a.completeness_residual());
      ++heads;
    }
  }
  double worst_affine = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w(kEncodedWidth), x(kEncodedWidth), b(kEncodedWidth);
    for (std::size_t i = 0; i < kEncodedWidth; ++i) {
      w[i] = standard_normal(rng);
      x[i] = 3.0 * standard_normal(rng);
      b[i] = standard_normal(rng);
    }
    const double bias = standard_normal(rng);
    const ScalarModel f = [w, bias](Graph& g, Var in) {
      Tensor wt = Tensor::matrix(w.size(), 1);
      for (std::size_t i = 0; i < w.size(); ++i) wt(i, 0) = w[i];
      return ad::add_scalar(ad::matmul(in, g.constant(wt)), bias);
    };
    const auto a = integrated_gradients(f, x, b, 32 + static_cast<std::size_t>(trial), feature_groups());
    worst_affine = std::max(worst_affine, a.completeness_residual());
    for (std::size_t i = 0; i < kEncodedWidth; ++i) {
      worst_affine = std::max(worst_affine, std::abs(a.slots[i] - w[i] * (x[i] - b[i])));
    }
  }
  v.detail << heads << " trained heads, worst residual at 512 steps " << worst << "; affine worst error "
           << worst_affine;
  v.require(heads == 20, "20 heads");
  v.require(worst <= 1e-3, "residual <= 1e-3");
  v.require(worst_affine <= 1e-12, "affine exact to 1e-12");
  return v;
}

// 3. Survival mixtures: S(0+) and monotone curves; single log-normal refit.
Verdict survival_soundness() {
  Verdict v;
  const Cohort train = generate_synthetic_cohort(5);
  const auto split = stratified_split(train, 5);
  const auto enc = FeatureEncoder::fit(split.train);
  const auto model = SurvivalModel::fit(split.train, enc, dtwin::testing::small_simulator_config(), 17);
  const Cohort patients = generate_synthetic_cohort(54, 100);
  const auto mixtures = model.predict(enc.encode_rows_full(patients), decision_matrix(patients));
  std::vector<double> grid;
  for (int i = 0; i <= 600; ++i) grid.push_back(0.25 * i + 1e-9);
  double min_s0 = 1.0;
  std::size_t violations = 0;
  for (const auto& row : mixtures) {
    for (const auto& m : row) {
      min_s0 = std::min(min_s0, m.survival(1e-6));
      const auto s = survival_curve(m, grid);
      for (std::size_t i = 1; i < s.size(); ++i) violations += s[i] > s[i - 1];
    }
  }

  Cohort c = generate_synthetic_cohort(51, 536);
  std::mt19937_64 rng(6);
  for (auto& r : c) {
    for (auto& e : r.outcome.endpoints) {
      const double t = std::exp(std::log(36.0) + 0.5 * standard_normal(rng));
      e.event = t <= 96.0;
      e.months = std::min(t, 96.0);
    }
  }
  const auto enc2 = FeatureEncoder::fit(c);
  SimulatorConfig cfg;
  cfg.train.max_epochs = 300;
  const auto refit = SurvivalModel::fit(c, enc2, cfg, 2).predict(enc2.encode_rows_full(c), decision_matrix(c));
  double worst_rel = 0.0;
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    std::vector<double> medians;
    for (const auto& m : refit) medians.push_back(m[e].median());
    std::nth_element(medians.begin(), medians.begin() + medians.size() / 2, medians.end());
    worst_rel = std::max(worst_rel, std::abs(medians[medians.size() / 2] / 36.0 - 1.0));
  }
  v.detail << "min S(0+) " << min_s0 << ", monotonicity violations " << violations
           << ", worst refit median error " << 100.0 * worst_rel << "%";
  v.require(min_s0 > 0.999, "S(0+) > 0.999");
  v.require(violations == 0, "monotone");
  v.require(worst_rel <= 0.2, "median within 20%");
  return v;
}

// Two-pass population std of logits in long double.
double caliper_oracle(const std::vector<double>& p, double alpha) {
  std::vector<long double> l;
  for (double x : p) l.push_back(std::log(static_cast<long double>(x)) - std::log1p(-static_cast<long double>(x)));
  long double mean = 0.0L;
  for (auto x : l) mean += x;
  mean /= static_cast<long double>(l.size());
  long double ss = 0.0L;
  for (auto x : l) ss += (x - mean) * (x - mean);
  return static_cast<double>(alpha * std::sqrt(ss / static_cast<long double>(l.size())));
}

// 4. Caliper formula and escalation.
Verdict caliper() {
  Verdict v;
  std::mt19937_64 rng(8);
  double worst = 0.0;
  std::size_t bad_escalation = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 20 + uniform_index(rng, 480);
    std::vector<double> q(n);
    const double spread = 0.2 + 3.0 * uniform01(rng);
    for (double& x : q) x = sigmoid(spread * standard_normal(rng));
    const double alpha = 0.01 + uniform01(rng);
    worst = std::max(worst, std::abs(caliper_distance(q, alpha) - caliper_oracle(q, alpha)));

    const Tensor emb = gaussian_points(rng, n, 3);
    std::vector<int> t(n);
    const double share = uniform01(rng);
    for (int& x : t) x = bernoulli(rng, share);
    NeighborConfig c;
    c.k = 11 + uniform_index(rng, std::min<std::size_t>(n, 200) - 11);
    c.alpha = 0.01 + 0.3 * uniform01(rng);
    const double qp = sigmoid(standard_normal(rng));
    const auto e = estimate_ate(emb.row_span(0), qp, emb, q, t, Tensor::matrix(n, 1), c);
    const bool enough = e.treated_ids.size() >= 5 && e.untreated_ids.size() >= 5;
    const std::size_t kept = e.treated_ids.size() + e.untreated_ids.size();
    if (!(enough || (kept == c.k && e.low_support))) ++bad_escalation;
    // Wider calipers keep a superset.
    const auto pool = knn(emb.row_span(0), emb, c.k);
    const double sd = caliper_distance(q, 1.0);
    MatchedGroups prev;
    for (int step = 0; step < 4; ++step) {
      auto m = caliper_match(pool, logit(qp), q, t, (c.alpha + c.alpha_step * step) * sd);
      std::sort(m.treated.begin(), m.treated.end());
      std::sort(m.untreated.begin(), m.untreated.end());
      if (!std::includes(m.treated.begin(), m.treated.end(), prev.treated.begin(), prev.treated.end()) ||
          !std::includes(m.untreated.begin(), m.untreated.end(), prev.untreated.begin(), prev.untreated.end())) {
        ++bad_escalation;
      }
      prev = std::move(m);
    }
  }
  v.detail << "worst |caliper - oracle| " << worst << ", escalation failures " << bad_escalation << " / 1000";
  v.require(worst <= 1e-12, "caliper within 1e-12");
  v.require(bad_escalation == 0, "escalation terminates and is monotone");
  return v;
}

// 5. Known additive treatment effect of 0.3.
Verdict ate_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  const std::size_t n = 500;
  const Tensor emb = gaussian_points(rng, n, 2);
  std::vector<double> prop(n);
  std::vector<int> t(n);
  Tensor y = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    prop[i] = sigmoid(emb(i, 0));
    t[i] = bernoulli(rng, prop[i]);
    y(i, 0) = bernoulli(rng, 0.1 + 0.4 * sigmoid(2.0 * emb(i, 0) + emb(i, 1)) + 0.3 * t[i]);
  }
  double mean = 0.0;
  for (int q = 0; q < 20; ++q) {
    const Tensor x = gaussian_points(rng, 1, 2);
    mean += estimate_ate(x.row_span(0), sigmoid(x(0, 0)), emb, prop, t, y, NeighborConfig{}).difference[0] / 20.0;
  }
  const double secs = seconds_since(t0);
  v.detail << "mean ATE " << mean << " (true 0.3), " << secs << " s";
  v.require(std::abs(mean - 0.3) <= 0.1, "within 0.1");
  v.require(secs < 120.0, "< 2 min");
  return v;
}

// 6. k-NN and neighbor treatment rate against exhaustive search.
Verdict knn_and_rate() {
  Verdict v;
  std::mt19937_64 rng(17);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 30 + uniform_index(rng, 300);
    const std::size_t d = 1 + uniform_index(rng, 20);
    const Tensor emb = gaussian_points(rng, n, d);
    std::vector<int> t(n);
    for (int& x : t) x = bernoulli(rng, uniform01(rng));
    const Tensor q = gaussian_points(rng, 1, d);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (emb(i, j) - q(0, j)) * (emb(i, j) - q(0, j));
      all.emplace_back(std::sqrt(s), i);
    }
    std::sort(all.begin(), all.end());
    const std::size_t k = 1 + uniform_index(rng, n);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < k; ++i) expect.push_back(all[i].second);
    if (knn(q.row_span(0), emb, k) != expect) ++mismatches;

    NeighborConfig c;
    c.k = std::min(std::max<std::size_t>(11, k), n);
    c.n = 1 + uniform_index(rng, c.k - 1);
    const auto r = neighbor_treatment_rate(q.row_span(0), emb, t, c);
    double count = 0.0;
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < c.n; ++i) {
      ids.push_back(all[i].second);
      count += t[all[i].second];
    }
    if (r.ids != ids || r.rate != count / static_cast<double>(c.n)) ++mismatches;
  }
  v.detail << "mismatches " << mismatches << " over 50 cohorts";
  v.require(mismatches == 0, "exact agreement");
  return v;
}

// 7. Imitation AUC on the separable cohort, with and without the triplet term.
Verdict policy_learning() {
  Verdict v;
  double sum_triplet = 0.0, sum_plain = 0.0, min_auc = 1.0, max_secs = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Cohort c = dtwin::testing::policy_separable_cohort(seed, 536);
    const auto split = stratified_split(c, seed);
    const auto enc = FeatureEncoder::fit(split.train);
    std::vector<TreatmentSequence> labels;
    for (const auto& r : split.train) labels.push_back(r.sequence);
    for (double w2 : {0.2, 0.0}) {
      PolicyConfig cfg;
      cfg.triplet.w2 = w2;
      const auto t0 = Clock::now();
      const auto model = PolicyModel::fit(split.train, enc, labels, cfg, seed);
      const double secs = seconds_since(t0);
      double mean = 0.0;
      for (std::size_t s = 0; s < kStages; ++s) {
        const Tensor x = enc.encode_rows(split.eval, static_cast<Stage>(s));
        const std::vector<Stage> stages(x.rows(), static_cast<Stage>(s));
        const auto out = model.predict_rows(x, stages, Strategy::Imitation);
        std::vector<double> scores;
        std::vector<int> y;
        for (std::size_t i = 0; i < out.size(); ++i) {
          scores.push_back(out[i].probability);
          y.push_back(split.eval[i].sequence.decisions[s]);
        }
        const double auc = roc_auc(scores, y).value_or(0.0);
        mean += auc / kStages;
        if (w2 > 0.0) min_auc = std::min(min_auc, auc);
      }
      (w2 > 0.0 ? sum_triplet : sum_plain) += mean / 5.0;
      if (w2 > 0.0) max_secs = std::max(max_secs, secs);
      std::printf("  seed %llu w2 %.1f mean held-out AUC %.4f (%.0f s)\n", static_cast<unsigned long long>(seed), w2,
                  mean, secs);
      std::fflush(stdout);
    }
  }
  v.detail << "min stage AUC " << min_auc << ", mean AUC triplet " << sum_triplet << " vs no triplet " << sum_plain
           << ", slowest fit " << max_secs << " s";
  v.require(min_auc >= 0.85, "AUC >= 0.85");
  v.require(max_secs < 300.0, "training < 5 min");
  v.require(sum_triplet >= sum_plain, "triplet >= no triplet");
  return v;
}

// 8. Exhaustive search on the additive stub against hand-computed objectives.
Verdict optimal_labels() {
  Verdict v;
  struct Case {
    int t_stage;
    std::array<bool, kStages> expect;
    std::array<double, kSequences> objective;  // by sequence index
  };
  // L = .15 + (.2 ic + .4 cc + .1 nd) + sum_o 1 / (base_o * scale).
  std::vector<Case> cases = {
      {1, {false, false, false}, {}},
      {4, {false, true, false}, {}},
      {3, {true, true, false}, {}},
  };
  cases[1].objective = {1.15, 1.05, 0.80, 0.85, 0.85, 0.85, 0.875, 0.95};
  cases[2].objective = {2.65, 2.25, 1.175, 1.15, 1.6, 1.45, 1.0625, 1.1};
  std::size_t checked = 0;
  double worst = 0.0;
  for (auto& c : cases) {
    PatientFeatures p;
    p.t_stage = c.t_stage;
    const auto choice = compute_optimal_label(AdditiveStub{}, p, OptimalObjectiveWeights{});
    v.require(choice.sequence.decisions == c.expect, "argmin for t_stage " + std::to_string(c.t_stage));
    if (c.t_stage == 1) continue;
    for (std::size_t i = 0; i < kSequences; ++i) {
      const auto s = TreatmentSequence::from_index(i);
      const std::size_t hand = 4 * s.ic() + 2 * s.cc() + s.nd();
      worst = std::max(worst, std::abs(choice.objective[i] - c.objective[hand]));
      ++checked;
    }
  }
  v.detail << "3 patients, " << checked << " objective values, worst error " << worst;
  v.require(worst <= 1e-12, "objectives match the hand computation");
  return v;
}

std::shared_ptr<const TwinEngine> default_engine;

// 9. Two full default pipelines give the same bundle digest.
Verdict determinism() {
  Verdict v;
  const auto t0 = Clock::now();
  default_engine = TwinEngine::train(PipelineConfig{});
  const double first = seconds_since(t0);
  const auto second = TwinEngine::train(PipelineConfig{});
  v.detail << "digests " << default_engine->digest().substr(0, 16) << " / " << second->digest().substr(0, 16)
           << ", pipeline " << first << " s";
  v.require(default_engine->digest() == second->digest(), "identical digests");
  return v;
}

// 10. handle_simulate latency on the default bundle.
Verdict latency() {
  Verdict v;
  if (!default_engine) default_engine = TwinEngine::train(PipelineConfig{});
  const auto engine = TwinEngine::from_bundle(default_engine->to_bundle());
  const auto& cohort = engine->eval_cohort();
  std::vector<double> ms;
  for (std::size_t i = 0; i < 40; ++i) {
    SimulationRequest req;
    req.patient = cohort[i % cohort.size()].features;
    req.decision = static_cast<Stage>(i % kStages);
    req.strategy = i % 2 ? Strategy::Optimal : Strategy::Imitation;
    req.seed = i;
    const auto t0 = Clock::now();
    handle_simulate(*engine, req);
    ms.push_back(1000.0 * seconds_since(t0));
  }
  std::sort(ms.begin(), ms.end());
  const double p95 = ms[static_cast<std::size_t>(std::ceil(0.95 * ms.size())) - 1];
  v.detail << "40 requests, median " << ms[ms.size() / 2] << " ms, p95 " << p95 << " ms";
  v.require(p95 < 5000.0, "p95 < 5 s");
  return v;
}

double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max({d, static_cast<double>(i + 1) / n - u[i], u[i] - static_cast<double>(i) / n});
  }
  return d;
}

// 11. Mahalanobis percentile calibration and the 75 rule.
Verdict mahalanobis() {
  Verdict v;
  std::mt19937_64 rng(29);
  double worst_ks = 0.0;
  for (std::size_t d : {2, 6, 20}) {
    const auto m = MahalanobisModel::fit(gaussian_points(rng, 1000, d));
    std::vector<double> u;
    for (int i = 0; i < 1000; ++i) u.push_back(m.rate(gaussian_points(rng, 1, d).row_span(0)).percentile / 100.0);
    worst_ks = std::max(worst_ks, ks_uniform(u));
  }
  std::vector<double> ref(100);
  std::iota(ref.begin(), ref.end(), 0.0);
  const bool at = novelty_from_distance(75.0, ref).trusted;
  const bool below = novelty_from_distance(74.5, ref).trusted;
  const bool above = novelty_from_distance(75.5, ref).trusted;
  v.detail << "worst KS " << worst_ks << ", trusted at 74.5/75/75.5: " << below << at << above;
  v.require(worst_ks < 0.1, "KS < 0.1");
  v.require(below && at && !above, "flip at 75");
  return v;
}

}  // namespace

// Optional arguments select criteria by substring.
int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"IG completeness", ig_completeness},
      {"survival mixture soundness", survival_soundness},
      {"caliper formula", caliper},
      {"ATE oracle", ate_oracle},
      {"k-NN and neighbor treatment rate", knn_and_rate},
      {"policy learning sanity", policy_learning},
      {"optimal-label generation", optimal_labels},
      {"end-to-end determinism", determinism},
      {"serving latency", latency},
      {"Mahalanobis percentile", mahalanobis},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (const auto& [name, run] : criteria) {
    bool selected = argc == 1;
    for (int i = 1; i < argc; ++i) selected |= name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    ++ran;
    const auto t0 = Clock::now();
    bool pass = false;
    std::string detail;
    try {
      Verdict v = run();
      pass = v.pass;
      detail = v.detail.str();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    failed += !pass;
    std::printf("%s  %-34s %s (%.1f s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", ran, failed);
  return failed == 0 ? 0 : 1;
}
