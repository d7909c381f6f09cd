#include "dtwin/encoding.hpp"

#include <cmath>

#include "dtwin/error.hpp"

namespace dtwin {

namespace {

double scaled(int v, int lo, int hi) { return static_cast<double>(v - lo) / static_cast<double>(hi - lo); }

std::array<double, 4> continuous(const PatientFeatures& p) {
  return {p.age, p.pack_years, p.total_dose, p.dose_fraction};
}

void put_transition(const std::optional<TransitionSummary>& t, std::span<double> out) {
  if (!t) return;
  out[0] = t->primary / 3.0;
  out[1] = t->nodal / 3.0;
  for (std::size_t i = 0; i < kDltTypes; ++i) out[2 + i] = t->dlt[i];
}

}  // namespace

TransitionSummary TransitionSummary::from_state(const TransitionState& s) {
  TransitionSummary t;
  t.primary = static_cast<double>(s.primary);
  t.nodal = static_cast<double>(s.nodal);
  for (std::size_t i = 0; i < kDltTypes; ++i) t.dlt[i] = s.dlt[i] ? 1.0 : 0.0;
  return t;
}

StageContext stage_context(const CohortRecord& r, Stage stage) {
  StageContext ctx;
  if (stage >= Stage::CC) {
    ctx.decisions[0] = r.sequence.ic();
    ctx.post_ic = TransitionSummary::from_state(r.post_ic);
  }
  if (stage >= Stage::ND) {
    ctx.decisions[1] = r.sequence.cc();
    ctx.post_cc = TransitionSummary::from_state(r.post_cc);
  }
  return ctx;
}

StageContext full_context(const CohortRecord& r) {
  StageContext ctx;
  for (std::size_t s = 0; s < kStages; ++s) ctx.decisions[s] = r.sequence.decisions[s];
  ctx.post_ic = TransitionSummary::from_state(r.post_ic);
  ctx.post_cc = TransitionSummary::from_state(r.post_cc);
  return ctx;
}

FeatureEncoder FeatureEncoder::fit(const Cohort& train) {
  if (train.empty()) throw UsageError("cannot fit feature normalization on an empty cohort");
  NormalizationStats st;
  const double n = static_cast<double>(train.size());
  for (const auto& r : train) {
    const auto v = continuous(r.features);
    for (std::size_t k = 0; k < 4; ++k) st.mean[k] += v[k] / n;
  }
  std::array<double, 4> ss{};
  for (const auto& r : train) {
    const auto v = continuous(r.features);
    for (std::size_t k = 0; k < 4; ++k) ss[k] += (v[k] - st.mean[k]) * (v[k] - st.mean[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double sd = std::sqrt(ss[k] / n);
    st.sd[k] = sd > 1e-12 ? sd : 1.0;
  }
  return FeatureEncoder(st);
}

const NormalizationStats& FeatureEncoder::stats() const {
  if (!fitted_) throw UsageError("feature encoder used before normalization statistics were fitted");
  return stats_;
}

void FeatureEncoder::encode_into(const PatientFeatures& p, const StageContext& ctx, std::span<double> out) const {
  if (!fitted_) throw UsageError("feature encoder used before normalization statistics were fitted");
  if (out.size() != kEncodedWidth) {
    throw ShapeError("encode: output width " + std::to_string(out.size()) + ", expected " +
                     std::to_string(kEncodedWidth));
  }
  std::fill(out.begin(), out.end(), 0.0);
  auto z = [&](std::size_t k, double v) { return (v - stats_.mean[k]) / stats_.sd[k]; };
  out[kSlotAge] = z(0, p.age);
  out[1] = p.male ? 1.0 : 0.0;
  if (p.race != Race::White) out[1 + static_cast<std::size_t>(p.race)] = 1.0;
  out[5] = p.hpv == Hpv::Positive ? 1.0 : 0.0;
  out[6] = p.hpv == Hpv::Unknown ? 1.0 : 0.0;
  out[7] = scaled(p.smoking, kSmokingMin, kSmokingMax);
  out[kSlotPackYears] = z(1, p.pack_years);
  for (std::size_t i = 0; i < kLymphNodeRegions; ++i) out[kSlotLymphNodes + i] = p.lymph_nodes[i] ? 1.0 : 0.0;
  out[kSlotTStage] = scaled(p.t_stage, kTStageMin, kTStageMax);
  out[kSlotNStage] = scaled(p.n_stage, kNStageMin, kNStageMax);
  out[kSlotAjcc] = scaled(p.ajcc, kAjccMin, kAjccMax);
  out[kSlotGrade] = scaled(p.grade, kGradeMin, kGradeMax);
  out[kSlotSubsite + static_cast<std::size_t>(p.subsite)] = 1.0;
  out[33] = p.bilateral ? 1.0 : 0.0;
  out[kSlotTotalDose] = z(2, p.total_dose);
  out[kSlotDoseFraction] = z(3, p.dose_fraction);
  out[36] = p.aspiration_pre ? 1.0 : 0.0;
  for (std::size_t s = 0; s < kStages; ++s) {
    if (ctx.decisions[s]) out[kSlotDecisions + s] = *ctx.decisions[s] ? 1.0 : 0.0;
  }
  put_transition(ctx.post_ic, out.subspan(kSlotPostIc, 2 + kDltTypes));
  put_transition(ctx.post_cc, out.subspan(kSlotPostCc, 2 + kDltTypes));
}

std::vector<double> FeatureEncoder::encode(const PatientFeatures& p, const StageContext& ctx) const {
  std::vector<double> out(kEncodedWidth);
  encode_into(p, ctx, out);
  return out;
}

Tensor FeatureEncoder::encode_rows(const Cohort& cohort, Stage stage) const {
  Tensor t = Tensor::matrix(cohort.size(), kEncodedWidth);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    encode_into(cohort[i].features, stage_context(cohort[i], stage), t.data().subspan(i * kEncodedWidth, kEncodedWidth));
  }
  return t;
}

Tensor FeatureEncoder::encode_rows_full(const Cohort& cohort) const {
  Tensor t = Tensor::matrix(cohort.size(), kEncodedWidth);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    encode_into(cohort[i].features, full_context(cohort[i]), t.data().subspan(i * kEncodedWidth, kEncodedWidth));
  }
  return t;
}

const std::vector<FeatureGroup>& feature_groups() {
  static const std::vector<FeatureGroup> groups = [] {
    std::vector<FeatureGroup> g = {
        {"age", {0}},       {"gender", {1}},      {"race", {2, 3, 4}}, {"hpv", {5, 6}},
        {"smoking", {7}},   {"pack_years", {8}},
    };
    for (std::size_t i = 0; i < kLymphNodeRegions; ++i) {
      g.push_back({"ln_" + std::string(lymph_node_region_name(i)), {kSlotLymphNodes + i}});
    }
    g.push_back({"t_stage", {kSlotTStage}});
    g.push_back({"n_stage", {kSlotNStage}});
    g.push_back({"ajcc", {kSlotAjcc}});
    g.push_back({"grade", {kSlotGrade}});
    g.push_back({"subsite", {27, 28, 29, 30, 31, 32}});
    g.push_back({"bilateral", {33}});
    g.push_back({"total_dose", {kSlotTotalDose}});
    g.push_back({"dose_fraction", {kSlotDoseFraction}});
    g.push_back({"aspiration_pre", {36}});
    g.push_back({"ic", {37}});
    g.push_back({"cc", {38}});
    g.push_back({"nd", {39}});
    for (const char* stage : {"ic", "cc"}) {
      const std::size_t base = std::string(stage) == "ic" ? kSlotPostIc : kSlotPostCc;
      g.push_back({std::string("primary_response_") + stage, {base}});
      g.push_back({std::string("nodal_response_") + stage, {base + 1}});
      for (std::size_t i = 0; i < kDltTypes; ++i) {
        g.push_back({"dlt_" + std::string(stage) + "_" + std::string(dlt_name(i)), {base + 2 + i}});
      }
    }
    return g;
  }();
  return groups;
}

const std::vector<std::string>& encoded_slot_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n(kEncodedWidth);
    for (const auto& g : feature_groups()) {
      if (g.slots.size() == 1) {
        n[g.slots[0]] = g.name;
        continue;
      }
      for (std::size_t k = 0; k < g.slots.size(); ++k) n[g.slots[k]] = g.name + "_" + std::to_string(k);
    }
    n[2] = "race_black";
    n[3] = "race_hispanic";
    n[4] = "race_other";
    n[5] = "hpv_positive";
    n[6] = "hpv_unknown";
    for (std::size_t s = 0; s < kSubsites; ++s) n[kSlotSubsite + s] = "subsite_" + std::string(subsite_name(static_cast<Subsite>(s)));
    return n;
  }();
  return names;
}

}  // namespace dtwin
