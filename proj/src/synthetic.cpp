#include "dtwin/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/special_functions/erf.hpp>

#include "dtwin/error.hpp"
#include "dtwin/random.hpp"

namespace dtwin {

namespace {

// Per-sequence marginal rates, one column per sequence in the order
// CC, None, CC+ND, IC+CC, IC+CC+ND, IC, ND, IC+ND.
using Row = std::array<double, kSequences>;
constexpr std::array<std::size_t, kSequences> kColumnSequence = {2, 0, 3, 6, 7, 4, 1, 5};

struct Table {
  Row count{223, 57, 51, 100, 36, 45, 11, 13};
  Row hpv_pos{.5650, .8070, .5490, .5000, .6111, .4222, .5455, .6154};
  Row hpv_unknown{.0628, .0175, .0784, .1600, .1111, .0222, .1818, .0769};
  Row age{59.3, 61.3, 57.7, 58.5, 58.3, 57.6, 59.6, 57.0};
  Row pack_years{17.6, 10.5, 18.9, 17.6, 21.8, 15.4, 16.7, 4.8};
  Row male{.8834, .8070, .9216, .8700, .9167, .8889, .8182, .9231};
  Row smoker{.1928, .1930, .3529, .2200, .2222, .2444, .1818, .0000};
  Row former{.4215, .4035, .2941, .3400, .3333, .3333, .5455, .3077};
  Row bilateral{.0448, .0351, .0588, .0400, .0278, .0222, .0000, .0000};
  std::array<Row, 4> t{{{.1883, .6316, .0588, .0600, .1389, .2889, .5455, .3077},
                        {.4215, .3333, .5490, .3300, .2778, .4889, .4545, .6154},
                        {.2466, .0351, .2157, .2900, .2778, .1778, .0000, .0769},
                        {.1435, .0000, .1765, .3200, .3056, .0444, .0000, .0000}}};
  std::array<Row, 3> n{{{.5291, .8070, .5294, .2700, .1667, .2222, .6364, .6154},
                        {.3946, .1228, .4314, .6500, .7500, .7333, .2727, .3846},
                        {.0179, .0000, .0000, .0800, .0833, .0444, .0000, .0000}}};
  std::array<Row, 3> ajcc{{{.1525, .0526, .1569, .1600, .2222, .2222, .0909, .0769},
                           {.0942, .0526, .1373, .2200, .2500, .0000, .1818, .0000},
                           {.3677, .1228, .3922, .4900, .3889, .5778, .1818, .3846}}};
  Row bot{.5022, .3509, .4706, .5600, .5556, .5778, .1818, .4615};
  Row gps{.0090, .0175, .0196, .0200, .0833, .0000, .0000, .0769};
  Row soft_palate{.0090, .0175, .0392, .0100, .0000, .0000, .0000, .0000};
  Row tonsil{.4126, .5439, .4118, .3600, .3333, .4000, .8182, .3077};
  std::array<Row, 4> grade{{{.0090, .0000, .0000, .0300, .0000, .0000, .0909, .0000},
                            {.2825, .3158, .2745, .2800, .3333, .2889, .4545, .0769},
                            {.5067, .5439, .5686, .4800, .5556, .4667, .3636, .6154},
                            {.0090, .0000, .0000, .0000, .0000, .0000, .0000, .0769}}};
  Row white{.9327, .8947, .9608, .8600, .8611, .9333, .9091, .9231};
  Row asp_pre{.0224, .0000, .0196, .0700, .0556, .0222, .0000, .0000};
  Row total_dose{68.99, 66.86, 69.47, 69.36, 69.33, 67.42, 68.05, 67.23};
  Row dose_fraction{2.10, 2.16, 2.08, 2.11, 2.08, 2.15, 2.17, 2.18};
  std::array<Row, 3> event_free{{{.7534, .8246, .7059, .7500, .6111, .8667, .6364, 1.000},
                                 {.9103, .9298, .6863, .8500, .6944, .9111, .6364, .8462},
                                 {.8969, .9649, .8627, .9000, .8056, .8889, .7273, 1.000}}};
  Row ft{.1749, .0526, .2157, .2500, .3889, .0889, .1818, .0000};
  Row asp_post{.1749, .0351, .2549, .2200, .4167, .0889, .1818, .0769};
  Row cr_primary_ic{0, 0, 0, .3400, .3889, .6667, 0, .4615};
  Row pr_primary_ic{0, 0, 0, .5200, .5556, .2889, 0, .3077};
  Row cr_nodal_ic{0, 0, 0, .1000, .0278, .1111, 0, 0};
  Row pr_nodal_ic{0, 0, 0, .7500, .8889, .8667, 0, .8462};
  Row dlt_ic{0, 0, 0, .7500, .5000, .6444, 0, .8462};
  Row cr_primary_cc{.8341, .9123, .6863, .9000, .7222, .9111, .8182, .9231};
  Row pr_primary_cc{.1614, .0702, .2549, .1000, .1944, .0444, .1818, .0769};
  Row cr_nodal_cc{.5202, .5263, .1765, .5800, .1944, .5778, .0909, .0769};
  Row pr_nodal_cc{.4395, .3509, .8039, .3400, .7778, .3778, .9091, .6923};
  Row dlt_cc{.2780, 0, .1569, .2900, .2500, 0, 0, 0};
};

const Table& table() {
  static const Table t;
  return t;
}

// Relative share of each DLT type among toxic events.
constexpr std::array<double, kDltTypes> kDltShare = {0.45, 0.10, 0.15, 0.20, 0.10};
// Lymph node level weights within one side (IA, IB, IIA, IIB, III, IV, V).
constexpr std::array<double, 7> kLevelWeight = {0.02, 0.08, 0.40, 0.15, 0.20, 0.10, 0.05};

constexpr double kLogTimeSd = 0.9;
constexpr std::array<double, kEndpoints> kRiskSlope = {0.5, 0.45, 0.4};
constexpr double kReferenceFollowUp = 72.0;

std::size_t column_of(std::size_t sequence) {
  for (std::size_t c = 0; c < kSequences; ++c) {
    if (kColumnSequence[c] == sequence) return c;
  }
  return 0;
}

std::size_t categorical(std::mt19937_64& rng, const double* w, std::size_t k) {
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += w[i];
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return k - 1;
}

double clamp_rate(double p) { return std::clamp(p, 0.005, 0.995); }
double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double probit(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }
double round_to(double v, double step) { return std::round(v / step) * step; }

// Response distribution (progressive, stable, partial, complete) from CR/PR
// rates; the remainder splits 4:1 between stable and progressive. `tilt`
// shifts mass toward better responses when positive.
Response sample_response(std::mt19937_64& rng, double cr, double pr, double tilt) {
  const double rest = std::max(0.0, 1.0 - cr - pr);
  std::array<double, 4> w = {0.2 * rest, 0.8 * rest, pr, cr};
  for (std::size_t k = 0; k < 4; ++k) w[k] *= std::exp(tilt * static_cast<double>(k));
  return static_cast<Response>(categorical(rng, w.data(), 4));
}

void sample_dlts(std::mt19937_64& rng, double rate, std::array<bool, kDltTypes>& out) {
  // Independent types with P(any) equal to `rate`.
  for (std::size_t i = 0; i < kDltTypes; ++i) {
    const double p = 1.0 - std::pow(1.0 - rate, kDltShare[i]);
    out[i] = bernoulli(rng, p);
  }
}

PatientFeatures sample_features(std::mt19937_64& rng, std::size_t col) {
  const Table& tb = table();
  PatientFeatures p;
  p.age = std::clamp(round_to(tb.age[col] + 9.0 * standard_normal(rng), 0.1), 25.0, 90.0);
  p.male = bernoulli(rng, tb.male[col]);
  if (!bernoulli(rng, tb.white[col])) {
    const double w[3] = {0.5, 0.3, 0.2};
    p.race = static_cast<Race>(1 + categorical(rng, w, 3));
  }
  {
    const double w[3] = {std::max(0.0, 1.0 - tb.hpv_pos[col] - tb.hpv_unknown[col]), tb.hpv_pos[col],
                         tb.hpv_unknown[col]};
    p.hpv = static_cast<Hpv>(categorical(rng, w, 3));
  }
  {
    const double w[3] = {std::max(0.0, 1.0 - tb.smoker[col] - tb.former[col]), tb.former[col], tb.smoker[col]};
    p.smoking = static_cast<int>(categorical(rng, w, 3));
  }
  {
    const double factor[3] = {0.3, 1.3, 1.8};
    const double e = -std::log(1.0 - uniform01(rng));
    p.pack_years = round_to(tb.pack_years[col] * factor[p.smoking] * e, 0.1);
  }
  {
    const double w[4] = {tb.t[0][col], tb.t[1][col], tb.t[2][col], tb.t[3][col]};
    p.t_stage = kTStageMin + static_cast<int>(categorical(rng, w, 4));
  }
  {
    const double n0 = std::max(0.0, 1.0 - tb.n[0][col] - tb.n[1][col] - tb.n[2][col]);
    const double w[4] = {n0, tb.n[0][col], tb.n[1][col], tb.n[2][col]};
    p.n_stage = static_cast<int>(categorical(rng, w, 4));
  }
  {
    const double a1 = std::max(0.0, 1.0 - tb.ajcc[0][col] - tb.ajcc[1][col] - tb.ajcc[2][col]);
    const double w[4] = {a1, tb.ajcc[0][col], tb.ajcc[1][col], tb.ajcc[2][col]};
    p.ajcc = kAjccMin + static_cast<int>(categorical(rng, w, 4));
  }
  {
    const double w[4] = {tb.grade[0][col], tb.grade[1][col], tb.grade[2][col], tb.grade[3][col]};
    p.grade = kGradeMin + static_cast<int>(categorical(rng, w, 4));
  }
  {
    const double rest = std::max(0.0, 1.0 - tb.bot[col] - tb.tonsil[col] - tb.gps[col] - tb.soft_palate[col]);
    const double w[6] = {tb.bot[col], tb.tonsil[col], tb.gps[col], tb.soft_palate[col], 0.5 * rest, 0.5 * rest};
    p.subsite = static_cast<Subsite>(categorical(rng, w, 6));
  }
  p.bilateral = bernoulli(rng, tb.bilateral[col]);
  p.total_dose = std::clamp(round_to(tb.total_dose[col] + 2.0 * standard_normal(rng), 0.01), 50.0, 80.0);
  p.dose_fraction = std::clamp(round_to(tb.dose_fraction[col] + 0.05 * standard_normal(rng), 0.01), 1.5, 2.5);
  p.aspiration_pre = bernoulli(rng, tb.asp_pre[col]);

  // Involved nodal levels: count grows with N stage; bilateral disease seeds
  // the contralateral side as well.
  std::size_t count = 0;
  switch (p.n_stage) {
    case 0: count = bernoulli(rng, 0.1) ? 1 : 0; break;
    case 1: count = 1 + uniform_index(rng, 2); break;
    case 2: count = 2 + uniform_index(rng, 2); break;
    default: count = 3 + uniform_index(rng, 3); break;
  }
  const std::size_t ipsi = uniform_index(rng, 2);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t side = (p.bilateral && k % 2 == 1) ? 1 - ipsi : ipsi;
    const std::size_t level = categorical(rng, kLevelWeight.data(), kLevelWeight.size());
    p.lymph_nodes[side * 7 + level] = true;
  }
  return p;
}

double latent_risk(const PatientFeatures& p) {
  return 0.45 * (p.t_stage - 2.4) + 0.35 * (p.n_stage - 1.3) + 0.6 * (p.hpv == Hpv::Negative) +
         0.3 * (p.hpv == Hpv::Unknown) + 0.25 * (p.smoking == 2) + 0.015 * (p.age - 59.0) +
         0.01 * (p.pack_years - 17.0);
}

}  // namespace

const std::array<double, kSequences>& reference_sequence_counts() {
  static const std::array<double, kSequences> counts = [] {
    std::array<double, kSequences> c{};
    for (std::size_t col = 0; col < kSequences; ++col) c[kColumnSequence[col]] = table().count[col];
    return c;
  }();
  return counts;
}

Cohort generate_synthetic_cohort(std::uint64_t seed, std::size_t n) {
  if (n < kMinSyntheticCohortSize) {
    throw ConfigError("synthetic cohort needs n >= " + std::to_string(kMinSyntheticCohortSize) + " (got " +
                      std::to_string(n) + ")");
  }
  const Table& tb = table();
  std::mt19937_64 seq_rng(derive_seed(seed, 1));
  std::mt19937_64 rng(derive_seed(seed, 2));

  std::vector<std::size_t> sequences;
  sequences.reserve(n);
  for (std::size_t s = 0; s < kSequences; ++s) sequences.insert(sequences.end(), 2, s);
  const auto& counts = reference_sequence_counts();
  while (sequences.size() < n) sequences.push_back(categorical(seq_rng, counts.data(), kSequences));
  shuffle_range(sequences.begin(), sequences.end(), seq_rng);

  Cohort cohort;
  cohort.reserve(n);
  for (std::size_t s : sequences) {
    const std::size_t col = column_of(s);
    CohortRecord r;
    r.sequence = TreatmentSequence::from_index(s);
    r.features = sample_features(rng, col);
    const PatientFeatures& p = r.features;
    const double t_tilt = -0.4 * (p.t_stage - 2.5);
    const double n_tilt = -0.4 * (p.n_stage - 1.5);

    if (r.sequence.ic()) {
      r.post_ic.primary = sample_response(rng, tb.cr_primary_ic[col], tb.pr_primary_ic[col], t_tilt);
      r.post_ic.nodal = sample_response(rng, tb.cr_nodal_ic[col], tb.pr_nodal_ic[col], n_tilt);
      sample_dlts(rng, tb.dlt_ic[col], r.post_ic.dlt);
    }
    r.post_cc.primary = sample_response(rng, tb.cr_primary_cc[col], tb.pr_primary_cc[col], t_tilt);
    r.post_cc.nodal = sample_response(rng, tb.cr_nodal_cc[col], tb.pr_nodal_cc[col], n_tilt);
    sample_dlts(rng, tb.dlt_cc[col], r.post_cc.dlt);

    const double risk = latent_risk(p);
    const bool complete = r.post_cc.primary == Response::Complete;
    const double follow_up = 48.0 + 48.0 * uniform01(rng);
    for (std::size_t e = 0; e < kEndpoints; ++e) {
      const double p_event = clamp_rate(1.0 - tb.event_free[e][col]);
      const double mu = std::log(kReferenceFollowUp) - std::hypot(kLogTimeSd, 0.5) * probit(p_event);
      double log_t = mu - kRiskSlope[e] * risk + kLogTimeSd * standard_normal(rng);
      if (e != static_cast<std::size_t>(Endpoint::FDM) && complete) log_t += 0.4;
      const double t = std::exp(log_t);
      auto& out = r.outcome.endpoints[e];
      out.event = t <= follow_up;
      out.months = std::max(0.01, round_to(out.event ? t : follow_up, 0.01));
    }
    const bool any_dlt_cc = std::any_of(r.post_cc.dlt.begin(), r.post_cc.dlt.end(), [](bool b) { return b; });
    r.outcome.feeding_tube =
        bernoulli(rng, sigmoid(logit(clamp_rate(tb.ft[col])) + 0.5 * risk + 0.6 * any_dlt_cc));
    r.outcome.aspiration_post = bernoulli(
        rng, sigmoid(logit(clamp_rate(tb.asp_post[col])) + 0.5 * risk + 0.6 * any_dlt_cc + 1.0 * p.aspiration_pre));
    cohort.push_back(std::move(r));
  }
  return cohort;
}

}  // namespace dtwin
