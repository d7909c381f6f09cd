#include "dtwin/api.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <random>

#include "dtwin/random.hpp"

namespace dtwin {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 4> kRaceKeys = {"white", "black", "hispanic", "other"};
constexpr std::array<std::string_view, 3> kHpvKeys = {"negative", "positive", "unknown"};
constexpr std::array<std::string_view, 4> kResponseKeys = {"progressive", "stable", "partial", "complete"};
constexpr std::array<std::string_view, 3> kProvenanceKeys = {"ground_truth", "user_fixed", "policy_decided"};
constexpr std::array<std::string_view, kAteOutcomes> kAteOutcomeKeys = {"feeding_tube", "aspiration"};

template <std::size_t N>
std::optional<std::size_t> key_index(const std::array<std::string_view, N>& keys, const std::string& s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (keys[i] == s) return i;
  }
  return std::nullopt;
}

template <std::size_t N>
std::string key_list(const std::array<std::string_view, N>& keys) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? ", " : "") + std::string(keys[i]);
  return out;
}

// Collects diagnostics while reading fields of one JSON object.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<Diagnostic>& diags) : j_(j), path_(std::move(path)), diags_(diags) {}

  void fail(const std::string& field, const std::string& msg) { diags_.push_back({0, path_ + field, msg}); }

  const json* find(const char* key) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }
  void number(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (v->is_number()) {
        out = v->get<double>();
      } else {
        fail(key, "expected a number");
      }
    }
  }
  void integer(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (v->is_number_integer()) {
        out = v->get<int>();
      } else {
        fail(key, "expected an integer");
      }
    }
  }
  void boolean(const char* key, bool& out) {
    if (const json* v = find(key)) read_bool(*v, key, out);
  }
  void read_bool(const json& v, const std::string& field, bool& out) {
    if (v.is_boolean()) {
      out = v.get<bool>();
    } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
      out = v.get<int>() == 1;
    } else {
      fail(field, "expected true/false");
    }
  }
  template <std::size_t N>
  std::optional<std::size_t> keyword(const char* key, const std::array<std::string_view, N>& keys) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_string()) {
      if (auto i = key_index(keys, v->get<std::string>())) return i;
    }
    fail(key, "expected one of " + key_list(keys));
    return std::nullopt;
  }
  void unknown_keys() {
    for (const auto& item : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), item.key()) == seen_.end()) fail(item.key(), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<Diagnostic>& diags_;
  std::vector<std::string> seen_;
};

std::optional<TransitionState> transition_from_json(const json& j, const std::string& path,
                                                    std::vector<Diagnostic>& diags) {
  if (!j.is_object()) {
    diags.push_back({0, path, "expected an object"});
    return std::nullopt;
  }
  const std::size_t before = diags.size();
  Reader r(j, path + ".", diags);
  TransitionState t;
  if (auto i = r.keyword("primary", kResponseKeys)) t.primary = static_cast<Response>(*i);
  if (auto i = r.keyword("nodal", kResponseKeys)) t.nodal = static_cast<Response>(*i);
  if (const json* d = r.find("dlt")) {
    if (!d->is_array() || d->size() != kDltTypes) {
      r.fail("dlt", "expected " + std::to_string(kDltTypes) + " flags");
    } else {
      for (std::size_t k = 0; k < kDltTypes; ++k) r.read_bool((*d)[k], "dlt[" + std::to_string(k) + "]", t.dlt[k]);
    }
  }
  r.unknown_keys();
  if (diags.size() != before) return std::nullopt;
  return t;
}

json ci_json(const PredictionWithCI& p) {
  return {{"point", p.point}, {"lower", p.lower}, {"upper", p.upper}, {"level", p.level}, {"samples", p.samples}};
}

json prediction_json(const TransitionPrediction& t) {
  return {{"primary", t.primary}, {"nodal", t.nodal}, {"dlt", t.dlt}};
}

json step_json(const DecisionStep& s) {
  return {{"stage", stage_name(s.stage)},
          {"decision", s.decision},
          {"provenance", kProvenanceKeys[static_cast<std::size_t>(s.provenance)]},
          {"probability", s.probability}};
}

json curve_json(const Trajectory& t, const OutcomeCI& ci, std::size_t e) {
  std::vector<double> lo, hi;
  for (const auto& p : ci.survival[e]) {
    lo.push_back(p.lower);
    hi.push_back(p.upper);
  }
  return {{"point", t.survival[e]}, {"lower", lo}, {"upper", hi}, {"median_months", t.median_months[e]}};
}

std::uint64_t server_seed() {
  static std::atomic<std::uint64_t> counter{std::random_device{}()};
  return derive_seed(counter.fetch_add(1), 0);
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

// ------------------------------------------------------------- patient

json patient_to_json(const PatientFeatures& p) {
  return {{"age", p.age},
          {"male", p.male},
          {"race", kRaceKeys[static_cast<std::size_t>(p.race)]},
          {"hpv", kHpvKeys[static_cast<std::size_t>(p.hpv)]},
          {"smoking", p.smoking},
          {"pack_years", p.pack_years},
          {"lymph_nodes", p.lymph_nodes},
          {"t_stage", p.t_stage},
          {"n_stage", p.n_stage},
          {"ajcc", p.ajcc},
          {"grade", p.grade},
          {"subsite", subsite_name(p.subsite)},
          {"bilateral", p.bilateral},
          {"total_dose", p.total_dose},
          {"dose_fraction", p.dose_fraction},
          {"aspiration_pre", p.aspiration_pre}};
}

PatientFeatures patient_from_json(const json& j, std::vector<Diagnostic>& diags, const std::string& path) {
  PatientFeatures p;
  if (!j.is_object()) {
    diags.push_back({0, path.empty() ? "patient" : path.substr(0, path.size() - 1), "expected an object"});
    return p;
  }
  Reader r(j, path, diags);
  r.number("age", p.age);
  r.boolean("male", p.male);
  if (auto i = r.keyword("race", kRaceKeys)) p.race = static_cast<Race>(*i);
  if (auto i = r.keyword("hpv", kHpvKeys)) p.hpv = static_cast<Hpv>(*i);
  r.integer("smoking", p.smoking);
  r.number("pack_years", p.pack_years);
  if (const json* ln = r.find("lymph_nodes")) {
    if (!ln->is_array() || ln->size() != kLymphNodeRegions) {
      r.fail("lymph_nodes", "expected " + std::to_string(kLymphNodeRegions) + " flags");
    } else {
      for (std::size_t i = 0; i < kLymphNodeRegions; ++i) {
        r.read_bool((*ln)[i], "lymph_nodes[" + std::to_string(i) + "]", p.lymph_nodes[i]);
      }
    }
  }
  r.integer("t_stage", p.t_stage);
  r.integer("n_stage", p.n_stage);
  r.integer("ajcc", p.ajcc);
  r.integer("grade", p.grade);
  if (const json* s = r.find("subsite")) {
    try {
      p.subsite = parse_subsite(s->is_string() ? s->get<std::string>() : std::string("?"));
    } catch (const DomainError&) {
      std::string names;
      for (std::size_t i = 0; i < kSubsites; ++i) names += (i ? ", " : "") + std::string(subsite_name(static_cast<Subsite>(i)));
      r.fail("subsite", "expected one of " + names);
    }
  }
  r.boolean("bilateral", p.bilateral);
  r.number("total_dose", p.total_dose);
  r.number("dose_fraction", p.dose_fraction);
  r.boolean("aspiration_pre", p.aspiration_pre);
  r.unknown_keys();
  for (auto d : validate_features(p)) {
    d.field = path + d.field;
    diags.push_back(std::move(d));
  }
  return p;
}

PatientFeatures patient_from_json(const json& j) {
  std::vector<Diagnostic> diags;
  PatientFeatures p = patient_from_json(j, diags, "");
  if (!diags.empty()) throw ValidationError(std::move(diags));
  return p;
}

json transition_to_json(const TransitionState& t) {
  return {{"primary", kResponseKeys[static_cast<std::size_t>(t.primary)]},
          {"nodal", kResponseKeys[static_cast<std::size_t>(t.nodal)]},
          {"dlt", t.dlt}};
}

// ------------------------------------------------------------- request

SimulationRequest request_from_json(const json& j) {
  std::vector<Diagnostic> diags;
  SimulationRequest req;
  if (!j.is_object()) throw ValidationError({{0, "", "request must be a JSON object"}});
  Reader r(j, "", diags);
  if (const json* v = r.find("schema_version")) {
    if (!v->is_number_integer() || v->get<int>() != kApiSchemaVersion) {
      r.fail("schema_version", "unsupported schema version (expected " + std::to_string(kApiSchemaVersion) + ")");
    }
  }
  if (const json* p = r.find("patient")) {
    req.patient = patient_from_json(*p, diags, "patient.");
  } else {
    r.fail("patient", "required");
  }
  if (const json* s = r.find("strategy")) {
    try {
      req.strategy = parse_strategy(s->is_string() ? s->get<std::string>() : "");
    } catch (const ConfigError&) {
      r.fail("strategy", "expected imitation or optimal");
    }
  }
  if (const json* d = r.find("decision")) {
    try {
      req.decision = parse_stage(d->is_string() ? d->get<std::string>() : "");
    } catch (const DomainError&) {
      r.fail("decision", "expected IC, CC or ND");
    }
  }
  if (const json* f = r.find("fixed")) {
    if (!f->is_object()) {
      r.fail("fixed", "expected an object keyed by IC, CC, ND");
    } else {
      for (const auto& item : f->items()) {
        Stage st;
        try {
          st = parse_stage(item.key());
        } catch (const DomainError&) {
          r.fail("fixed." + item.key(), "unknown decision");
          continue;
        }
        if (item.value().is_null()) continue;
        bool v = false;
        r.read_bool(item.value(), "fixed." + item.key(), v);
        req.fixed[static_cast<std::size_t>(st)] = v;
      }
    }
  }
  if (const json* t = r.find("post_ic")) req.post_ic = transition_from_json(*t, "post_ic", diags);
  if (const json* t = r.find("post_cc")) req.post_cc = transition_from_json(*t, "post_cc", diags);
  if (const json* c = r.find("ci_level")) {
    if (!c->is_number() || !(c->get<double>() > 0.0 && c->get<double>() < 1.0)) {
      r.fail("ci_level", "expected a number in (0, 1)");
    } else {
      req.ci_level = c->get<double>();
    }
  }
  if (const json* s = r.find("seed")) {
    if (s->is_number_unsigned()) {
      req.seed = s->get<std::uint64_t>();
    } else if (s->is_number_integer() && s->get<std::int64_t>() >= 0) {
      req.seed = static_cast<std::uint64_t>(s->get<std::int64_t>());
    } else {
      r.fail("seed", "expected a non-negative integer");
    }
  }
  r.unknown_keys();

  // An observed transition needs its decision fixed, and an untreated IC
  // stage cannot change the disease.
  auto check_known = [&](const std::optional<TransitionState>& t, std::size_t s, const char* field) {
    if (!t) return;
    if (!req.fixed[s]) {
      r.fail(field, std::string("requires fixed.") + std::string(stage_name(static_cast<Stage>(s))));
    } else if (s == 0 && !*req.fixed[s] && !(*t == TransitionState{})) {
      r.fail(field, "must be stable with no toxicity when IC is not given");
    }
  };
  check_known(req.post_ic, 0, "post_ic");
  check_known(req.post_cc, 1, "post_cc");
  if (!diags.empty()) throw ValidationError(std::move(diags));
  return req;
}

json request_to_json(const SimulationRequest& r) {
  json j;
  j["schema_version"] = kApiSchemaVersion;
  j["patient"] = patient_to_json(r.patient);
  j["strategy"] = strategy_name(r.strategy);
  j["decision"] = stage_name(r.decision);
  j["fixed"] = json::object();
  for (std::size_t s = 0; s < kStages; ++s) {
    if (r.fixed[s]) j["fixed"][std::string(stage_name(static_cast<Stage>(s)))] = *r.fixed[s];
  }
  if (r.post_ic) j["post_ic"] = transition_to_json(*r.post_ic);
  if (r.post_cc) j["post_cc"] = transition_to_json(*r.post_cc);
  j["ci_level"] = r.ci_level;
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

// ------------------------------------------------------------- simulate

SimulationResponse handle_simulate(const TwinEngine& engine, const SimulationRequest& req) {
  const auto t_start = Clock::now();
  {
    auto diags = validate_features(req.patient);
    for (auto& d : diags) d.field = "patient." + d.field;
    if (!diags.empty()) throw ValidationError(std::move(diags));
  }
  const PatientFeatures& p = req.patient;
  const auto& cfg = engine.config();
  const auto& sim = engine.simulator();
  const auto& policy = engine.policy();
  const std::size_t studied = static_cast<std::size_t>(req.decision);

  SimulationResponse res;
  res.request = req;
  res.seed = req.seed ? *req.seed : server_seed();

  // Decisions and known transitions per branch. Stages before the one under
  // study resolve identically on both branches.
  auto t0 = Clock::now();
  StageContext studied_ctx;
  std::array<std::optional<TransitionState>, 2> known_ic, known_cc;
  for (std::size_t b = 0; b < 2; ++b) {
    Branch& br = res.branches[b];
    br.treated = b == 1;
    StageContext ctx;
    for (std::size_t s = 0; s < kStages; ++s) {
      const Stage st = static_cast<Stage>(s);
      if (s == studied) studied_ctx = ctx;
      const PolicyOutput po = policy.predict(p, ctx, st, req.strategy);
      DecisionStep step{st, false, Provenance::PolicyDecided, po.probability};
      if (s == studied) {
        step.decision = br.treated;
        if (req.fixed[s]) step.provenance = Provenance::UserFixed;
      } else if (req.fixed[s]) {
        step.decision = *req.fixed[s];
        step.provenance = Provenance::UserFixed;
      } else {
        step.decision = po.probability >= 0.5;
      }
      br.steps[s] = step;
      ctx.decisions[s] = step.decision;
      if (s == 0) {
        if (req.post_ic && req.fixed[0] && step.decision == *req.fixed[0]) known_ic[b] = req.post_ic;
        ctx.post_ic = known_ic[b] ? TransitionSummary::from_state(*known_ic[b])
                                  : sim.predict_transition(p, StageContext{}, Stage::IC, step.decision).expected();
      } else if (s == 1) {
        if (req.post_cc && req.fixed[1] && step.decision == *req.fixed[1]) known_cc[b] = req.post_cc;
        StageContext before;
        before.decisions[0] = ctx.decisions[0];
        before.post_ic = ctx.post_ic;
        ctx.post_cc = known_cc[b] ? TransitionSummary::from_state(*known_cc[b])
                                  : sim.predict_transition(p, before, Stage::CC, step.decision).expected();
      }
    }
  }
  res.policy = policy.predict(p, studied_ctx, req.decision, req.strategy);
  res.recommended = res.policy.probability >= 0.5;
  res.selected = (req.fixed[studied] ? *req.fixed[studied] : res.recommended) ? 1 : 0;
  res.timing_ms["policy"] = ms_since(t0);

  t0 = Clock::now();
  for (std::size_t b = 0; b < 2; ++b) {
    Branch& br = res.branches[b];
    TreatmentSequence seq;
    for (std::size_t s = 0; s < kStages; ++s) {
      seq.decisions[s] = br.steps[s].decision;
      seq.provenance[s] = br.steps[s].provenance;
    }
    br.trajectory = sim.rollout_known(p, seq, known_ic[b], known_cc[b]);
    br.ci = sim.outcome_ci(p, br.trajectory, cfg.mc_samples, req.ci_level, derive_seed(res.seed, b));
  }
  res.timing_ms["rollout"] = ms_since(t0);

  t0 = Clock::now();
  const std::vector<double> x = engine.encoder().encode(p, studied_ctx);
  const std::vector<double> xb = engine.encoder().encode(engine.baseline(), baseline_context(req.decision));
  res.attributions = integrated_gradients(policy_scalar_model(policy, req.decision, req.strategy), x, xb,
                                          cfg.ig_steps, feature_groups());
  res.waterfall = aggregate_for_waterfall(res.attributions, res.attributions.threshold);
  res.timing_ms["attribution"] = ms_since(t0);

  t0 = Clock::now();
  const auto& emb = res.policy.embedding;
  res.novelty = engine.novelty(req.strategy, req.decision).rate(emb);
  res.neighbor_rate = neighbor_treatment_rate(emb, engine.embeddings(req.strategy, req.decision),
                                              engine.treated(req.decision), cfg.neighbors);
  const double propensity = clamp_propensity(
      req.strategy == Strategy::Imitation ? res.policy.probability
                                          : policy.predict(p, studied_ctx, req.decision, Strategy::Imitation).probability);
  res.ate = estimate_ate(emb, propensity, engine.embeddings(req.strategy, req.decision),
                         engine.propensities(req.decision), engine.treated(req.decision), engine.ate_outcomes(),
                         cfg.neighbors);
  const auto& cohort = engine.train_cohort();
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    for (int treated = 0; treated < 2; ++treated) {
      const auto& ids = treated ? res.ate.treated_ids : res.ate.untreated_ids;
      std::vector<double> times;
      std::vector<int> events;
      for (std::size_t i : ids) {
        times.push_back(cohort[i].outcome.endpoints[e].months);
        events.push_back(cohort[i].outcome.endpoints[e].event ? 1 : 0);
      }
      (treated ? res.km_treated : res.km_untreated)[e] = kaplan_meier(times, events, serving_time_grid());
    }
  }
  res.risks.push_back({"feeding_tube", res.branches[1].ci.feeding_tube, res.branches[0].ci.feeding_tube,
                       res.ate.treated_rate[0], res.ate.untreated_rate[0]});
  res.risks.push_back({"aspiration", res.branches[1].ci.aspiration, res.branches[0].ci.aspiration,
                       res.ate.treated_rate[1], res.ate.untreated_rate[1]});
  res.timing_ms["neighbors"] = ms_since(t0);

  t0 = Clock::now();
  const auto& sel = res.selected_branch().steps;
  const Stage symptom_stage = req.decision == Stage::ND ? Stage::CC : req.decision;
  res.symptoms = predict_trajectories(engine.symptoms(),
                                      SymptomFeatures::from_patient(p, sel[0].decision, sel[1].decision), symptom_stage);
  res.timing_ms["symptoms"] = ms_since(t0);
  res.timing_ms["total"] = ms_since(t_start);
  return res;
}

json SimulationResponse::to_json() const {
  json j;
  j["schema_version"] = kApiSchemaVersion;
  j["seed"] = seed;
  j["decision"] = stage_name(request.decision);
  j["strategy"] = strategy_name(request.strategy);
  j["policy"] = {{"probability", policy.probability}, {"recommended", recommended}, {"embedding", policy.embedding}};
  j["selected_branch"] = selected;
  json steps = json::array();
  for (const auto& s : selected_branch().steps) steps.push_back(step_json(s));
  j["decisions"] = steps;

  json branches_json = json::array();
  for (const auto& b : branches) {
    json bs = json::array();
    for (const auto& s : b.steps) bs.push_back(step_json(s));
    branches_json.push_back({{"treated", b.treated},
                             {"sequence", b.trajectory.sequence.label()},
                             {"decisions", bs},
                             {"post_ic", prediction_json(b.trajectory.post_ic)},
                             {"post_cc", prediction_json(b.trajectory.post_cc)},
                             {"feeding_tube", ci_json(b.ci.feeding_tube)},
                             {"aspiration", ci_json(b.ci.aspiration)}});
  }
  j["branches"] = branches_json;

  json features = json::array();
  for (const auto& a : attributions.features) features.push_back({{"name", a.name}, {"value", a.value}});
  json wf = json::array();
  for (const auto& w : waterfall) {
    wf.push_back({{"name", w.name}, {"value", w.value}, {"start", w.start}, {"end", w.end}, {"other", w.other}});
  }
  j["attributions"] = {{"baseline_probability", attributions.baseline_probability},
                       {"final_probability", attributions.final_probability},
                       {"steps", attributions.steps},
                       {"threshold", attributions.threshold},
                       {"completeness_residual", attributions.completeness_residual()},
                       {"features", features},
                       {"waterfall", wf}};
  j["novelty"] = {{"distance", novelty.distance}, {"percentile", novelty.percentile}, {"trusted", novelty.trusted}};
  j["neighbors"] = {{"treatment_rate", neighbor_rate.rate},
                    {"ids", neighbor_rate.ids},
                    {"ate",
                     {{"outcomes", kAteOutcomeKeys},
                      {"treated_rate", ate.treated_rate},
                      {"untreated_rate", ate.untreated_rate},
                      {"difference", ate.difference},
                      {"alpha", ate.alpha},
                      {"caliper", ate.caliper},
                      {"treated_ids", ate.treated_ids},
                      {"untreated_ids", ate.untreated_ids},
                      {"low_support", ate.low_support}}}};

  json endpoints = json::object();
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    endpoints[std::string(endpoint_name(static_cast<Endpoint>(e)))] = {
        {"twin_treated", curve_json(branches[1].trajectory, branches[1].ci, e)},
        {"twin_untreated", curve_json(branches[0].trajectory, branches[0].ci, e)},
        {"neighbor_treated", km_treated[e]},
        {"neighbor_untreated", km_untreated[e]}};
  }
  j["survival"] = {{"time_grid", serving_time_grid()}, {"endpoints", endpoints}};

  json risk_rows = json::array();
  for (const auto& r : risks) {
    risk_rows.push_back({{"outcome", r.outcome},
                         {"twin_treated", ci_json(r.twin_treated)},
                         {"twin_untreated", ci_json(r.twin_untreated)},
                         {"neighbor_treated", r.neighbor_treated},
                         {"neighbor_untreated", r.neighbor_untreated}});
  }
  j["risks"] = risk_rows;

  json sym = json::array();
  for (const auto& s : symptoms.symptoms) {
    sym.push_back({{"name", s.name},
                   {"treated_median", s.treated_median},
                   {"untreated_median", s.untreated_median},
                   {"treated", s.treated},
                   {"untreated", s.untreated}});
  }
  j["symptoms"] = {{"treatment", stage_name(symptoms.treatment)},
                   {"weeks", kSymptomWeeks},
                   {"treated_ids", symptoms.treated_ids},
                   {"untreated_ids", symptoms.untreated_ids},
                   {"low_support", symptoms.low_support},
                   {"trajectories", sym}};
  j["timing_ms"] = timing_ms;
  return j;
}

// ------------------------------------------------------------- metadata

json api_schema() {
  auto num = [](const char* name, double lo, double hi, double def, const char* unit) {
    return json{{"name", name}, {"type", "number"}, {"min", lo}, {"max", hi}, {"default", def}, {"unit", unit}};
  };
  auto integer = [](const char* name, int lo, int hi, int def) {
    return json{{"name", name}, {"type", "integer"}, {"min", lo}, {"max", hi}, {"default", def}};
  };
  auto flag = [](const char* name, bool def) { return json{{"name", name}, {"type", "boolean"}, {"default", def}}; };
  auto category = [](const char* name, std::vector<std::string> values, const std::string& def) {
    return json{{"name", name}, {"type", "category"}, {"values", values}, {"default", def}};
  };
  const PatientFeatures d;
  std::vector<std::string> regions, subsites;
  for (std::size_t i = 0; i < kLymphNodeRegions; ++i) regions.emplace_back(lymph_node_region_name(i));
  for (std::size_t i = 0; i < kSubsites; ++i) subsites.emplace_back(subsite_name(static_cast<Subsite>(i)));

  json features = json::array();
  features.push_back(num("age", 0.0, 120.0, d.age, "years"));
  features.push_back(flag("male", d.male));
  features.push_back(category("race", {kRaceKeys.begin(), kRaceKeys.end()}, "white"));
  features.push_back(category("hpv", {kHpvKeys.begin(), kHpvKeys.end()}, "positive"));
  features.push_back(integer("smoking", kSmokingMin, kSmokingMax, d.smoking));
  features.push_back(num("pack_years", 0.0, 200.0, d.pack_years, "pack-years"));
  features.push_back({{"name", "lymph_nodes"}, {"type", "flags"}, {"regions", regions}});
  features.push_back(integer("t_stage", kTStageMin, kTStageMax, d.t_stage));
  features.push_back(integer("n_stage", kNStageMin, kNStageMax, d.n_stage));
  features.push_back(integer("ajcc", kAjccMin, kAjccMax, d.ajcc));
  features.push_back(integer("grade", kGradeMin, kGradeMax, d.grade));
  features.push_back(category("subsite", subsites, std::string(subsite_name(d.subsite))));
  features.push_back(flag("bilateral", d.bilateral));
  features.push_back(num("total_dose", 0.0, 100.0, d.total_dose, "Gy"));
  features.push_back(num("dose_fraction", 0.0, 10.0, d.dose_fraction, "Gy/fraction"));
  features.push_back(flag("aspiration_pre", d.aspiration_pre));

  std::vector<std::string> dlts, symptoms;
  for (std::size_t k = 0; k < kDltTypes; ++k) dlts.emplace_back(dlt_name(k));
  for (const auto& s : default_symptom_names()) symptoms.push_back(s);
  return {{"schema_version", kApiSchemaVersion},
          {"features", features},
          {"decisions", {"IC", "CC", "ND"}},
          {"strategies", {"imitation", "optimal"}},
          {"responses", kResponseKeys},
          {"dlt_types", dlts},
          {"endpoints", {"OS", "LRC", "FDM"}},
          {"time_grid_months", {serving_time_grid().front(), serving_time_grid().back()}},
          {"symptoms", symptoms},
          {"symptom_weeks", kSymptomWeeks},
          {"trusted_percentile", kTrustedPercentile}};
}

json model_info(const TwinEngine& engine) {
  return {
      {"schema_version", kApiSchemaVersion},
      {"bundle_format_version", kBundleFormatVersion},
      {"bundle_digest", engine.digest()},
      {"data_provenance",
       "All cohorts are synthetic. Treatment-sequence counts and per-sequence feature rates follow published "
       "summary statistics of an oropharyngeal cancer cohort; outcomes come from a documented latent-risk model. "
       "No real patient records are included."},
      {"cohort",
       {{"train", engine.train_cohort().size()},
        {"eval", engine.eval_cohort().size()},
        {"symptom", engine.symptoms().cohort().size()}}},
      {"models",
       json::array({{{"name", "transition"}, {"description", "response and toxicity after IC and after CC/RT; MLP, MC-dropout"}},
                    {{"name", "static_outcomes"}, {"description", "feeding tube and aspiration at six months"}},
                    {{"name", "survival"}, {"description", "log-normal mixture per endpoint (OS, LRC, FDM)"}},
                    {{"name", "policy"},
                     {"description", "transformer encoder with imitation (physician) and optimal (simulator argmin) heads"}},
                    {{"name", "symptoms"}, {"description", "MLP over reduced features, 10 symptoms at 4 timepoints"}}})},
      {"limitations",
       {"Trained on synthetic data; predictions do not describe real patients.",
        "Neighbor evidence comes from a small cohort; low-support estimates are flagged.",
        "Novelty percentile above 75 means the patient is unlike the training cohort.",
        "Not a medical device. For research and demonstration only."}},
      {"config", engine.config().to_json()}};
}

}  // namespace dtwin
