#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "dtwin/api.hpp"
#include "dtwin/bundle.hpp"
#include "dtwin/engine.hpp"
#include "dtwin/error.hpp"
#include "dtwin/server.hpp"

#include <httplib.h>

using namespace dtwin;
using nlohmann::json;

namespace {

const std::shared_ptr<const TwinEngine>& shared_engine() {
  static const auto e = [] {
    PipelineConfig c = PipelineConfig::small();
    c.seed = 11;
    return TwinEngine::train(c);
  }();
  return e;
}

std::string shared_bundle_bytes() {
  static const std::string bytes = [] {
    ModelBundle b = shared_engine()->to_bundle();
    return serialize_bundle(b);
  }();
  return bytes;
}

PatientFeatures sample_patient() {
  PatientFeatures p;
  p.age = 58.0;
  p.hpv = Hpv::Negative;
  p.smoking = 2;
  p.pack_years = 30.0;
  p.t_stage = 3;
  p.n_stage = 2;
  p.ajcc = 3;
  p.grade = 2;
  p.lymph_nodes[3] = true;
  p.subsite = Subsite::Tonsil;
  return p;
}

SimulationRequest sample_request(Stage decision = Stage::CC) {
  SimulationRequest r;
  r.patient = sample_patient();
  r.decision = decision;
  r.seed = 99;
  return r;
}

// Serialized so NaN fields compare equal.
std::string without_timing(json j) {
  j.erase("timing_ms");
  return j.dump();
}

}  // namespace

TEST_CASE("bundle container") {
  ModelBundle b;
  b.add("a", Tensor::from_rows({{1.0, -2.5}, {std::nextafter(1.0, 2.0), 1e-300}}));
  b.add("scalar", Tensor::scalar(3.0));
  b.metadata["note"] = "x";
  const std::string bytes = serialize_bundle(b);
  REQUIRE(b.digest.size() == 64);

  SUBCASE("round trip is bit exact") {
    const ModelBundle back = deserialize_bundle(bytes);
    CHECK(back.digest == b.digest);
    CHECK(back.metadata == b.metadata);
    REQUIRE(back.arrays.size() == 2);
    CHECK(back.at("a").shape == std::vector<std::size_t>{2, 2});
    CHECK(back.at("a").data == b.at("a").data);
    CHECK(back.tensor("scalar").data()[0] == 3.0);
  }
  SUBCASE("every corrupted payload byte is rejected") {
    const std::size_t payload_start = bytes.size() - 32 - 5 * sizeof(double);
    for (std::size_t i = payload_start; i < bytes.size() - 32; ++i) {
      std::string bad = bytes;
      bad[i] = static_cast<char>(bad[i] ^ 0x01);
      CHECK_THROWS_WITH_AS(deserialize_bundle(bad), doctest::Contains("digest"), BundleError);
    }
  }
  SUBCASE("version and magic are checked") {
    std::string bad = bytes;
    bad[8] = 2;
    CHECK_THROWS_WITH_AS(deserialize_bundle(bad), doctest::Contains("version 2"), BundleError);
    bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_bundle(bad), BundleError);
    CHECK_THROWS_AS(deserialize_bundle(bytes.substr(0, 10)), BundleError);
  }
  SUBCASE("digest is SHA-256") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(b.digest == sha256_hex(std::string_view(bytes).substr(0, bytes.size() - 32)));
  }
  SUBCASE("missing arrays and duplicates") {
    CHECK_THROWS_AS(b.at("nope"), BundleError);
    CHECK_THROWS_AS(b.add("a", Tensor::scalar(1.0)), UsageError);
    CHECK_THROWS_AS(b.parameters("params."), BundleError);
  }
  SUBCASE("files") {
    const auto path = std::filesystem::temp_directory_path() / "dtwin_test_bundle.bnd";
    save_bundle(b, path);
    CHECK(load_bundle(path).digest == b.digest);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_bundle(path), BundleError);
  }
}

TEST_CASE("pipeline config JSON") {
  PipelineConfig c = PipelineConfig::small();
  c.policy.orientation = AttentionOrientation::Paper;
  c.objective.w_z[3] = 0.5;
  c.neighbors.k = 50;
  const json j = c.to_json();
  const PipelineConfig back = PipelineConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(PipelineConfig::from_json(json::object()).to_json() == PipelineConfig{}.to_json());

  json bad = j;
  bad["policy"]["widht"] = 3;
  CHECK_THROWS_WITH_AS(PipelineConfig::from_json(bad), doctest::Contains("policy.widht"), ConfigError);
  bad = j;
  bad["mc_samples"] = "many";
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), ConfigError);
  bad = j;
  bad["neighbors"]["n"] = 500;
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), ConfigError);
}

TEST_CASE("patient and request JSON") {
  SUBCASE("patient round trip") {
    const PatientFeatures p = sample_patient();
    CHECK(patient_from_json(patient_to_json(p)) == p);
    CHECK(patient_from_json(json::object()) == PatientFeatures{});
  }
  SUBCASE("diagnostics name every bad field") {
    json j = patient_to_json(sample_patient());
    j["t_stage"] = 7;
    j["race"] = "martian";
    j["age"] = "old";
    j["colour"] = 1;
    try {
      patient_from_json(j);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      std::vector<std::string> fields;
      for (const auto& d : e.diagnostics()) fields.push_back(d.field);
      std::sort(fields.begin(), fields.end());
      CHECK(fields == std::vector<std::string>{"age", "colour", "race", "t_stage"});
    }
  }
  SUBCASE("request round trip") {
    SimulationRequest r = sample_request(Stage::ND);
    r.strategy = Strategy::Optimal;
    r.fixed[0] = true;
    r.post_ic = TransitionState{Response::Complete, Response::Partial, {true, false, false, false, true}};
    r.ci_level = 0.9;
    const SimulationRequest back = request_from_json(request_to_json(r));
    CHECK(back.patient == r.patient);
    CHECK(back.strategy == r.strategy);
    CHECK(back.decision == r.decision);
    CHECK(back.fixed == r.fixed);
    CHECK(back.post_ic == r.post_ic);
    CHECK(back.ci_level == r.ci_level);
    CHECK(back.seed == r.seed);
  }
  SUBCASE("request rules") {
    auto field_of = [](const json& j) {
      try {
        request_from_json(j);
      } catch (const ValidationError& e) {
        return e.diagnostics().at(0).field;
      }
      return std::string();
    };
    const json patient = patient_to_json(sample_patient());
    CHECK(field_of({{"decision", "CC"}}) == "patient");
    CHECK(field_of({{"patient", patient}, {"decision", "RT"}}) == "decision");
    CHECK(field_of({{"patient", patient}, {"strategy", "greedy"}}) == "strategy");
    CHECK(field_of({{"patient", patient}, {"fixed", {{"XX", true}}}}) == "fixed.XX");
    CHECK(field_of({{"patient", patient}, {"ci_level", 1.5}}) == "ci_level");
    CHECK(field_of({{"patient", patient}, {"seed", -1}}) == "seed");
    CHECK(field_of({{"patient", patient}, {"schema_version", 9}}) == "schema_version");
    const json complete = transition_to_json({Response::Complete, Response::Complete, {}});
    CHECK(field_of({{"patient", patient}, {"post_ic", complete}}) == "post_ic");
    CHECK(field_of({{"patient", patient}, {"fixed", {{"IC", false}}}, {"post_ic", complete}}) == "post_ic");
    CHECK(field_of({{"patient", patient}, {"fixed", {{"IC", true}}}, {"post_ic", complete}}).empty());
    CHECK(field_of({{"patient", patient}, {"fixed", {{"IC", nullptr}}}}).empty());
  }
}

TEST_CASE("bundle reload reproduces predictions bit-identically") {
  const auto& a = *shared_engine();
  const auto b = TwinEngine::from_bundle(deserialize_bundle(shared_bundle_bytes()));
  CHECK(b->digest() == a.digest());
  CHECK(b->to_bundle().digest == a.digest());
  CHECK(b->baseline() == a.baseline());
  CHECK(b->train_cohort() == a.train_cohort());
  CHECK(b->eval_cohort() == a.eval_cohort());

  const PatientFeatures p = sample_patient();
  const auto seq = TreatmentSequence::from_index(3);
  const auto ta = a.simulator().rollout(p, seq);
  const auto tb = b->simulator().rollout(p, seq);
  CHECK(ta.p_feeding_tube == tb.p_feeding_tube);
  CHECK(ta.survival == tb.survival);
  for (Stage st : {Stage::IC, Stage::CC, Stage::ND}) {
    const auto ctx = baseline_context(st);
    for (Strategy s : {Strategy::Imitation, Strategy::Optimal}) {
      const auto pa = a.policy().predict(p, ctx, st, s);
      const auto pb = b->policy().predict(p, ctx, st, s);
      CHECK(pa.probability == pb.probability);
      CHECK(pa.embedding == pb.embedding);
      CHECK(std::ranges::equal(a.embeddings(s, st).data(), b->embeddings(s, st).data()));
    }
    CHECK(a.propensities(st) == b->propensities(st));
  }
  CHECK(a.symptoms().predict(SymptomFeatures{}) == b->symptoms().predict(SymptomFeatures{}));

  const auto ra = handle_simulate(a, sample_request()).to_json();
  const auto rb = handle_simulate(*b, sample_request()).to_json();
  CHECK(without_timing(ra) == without_timing(rb));
}

TEST_CASE("pipeline determinism") {
  PipelineConfig c = PipelineConfig::small();
  c.seed = 11;
  CHECK(TwinEngine::train(c)->digest() == shared_engine()->digest());
  c.seed = 12;
  CHECK(TwinEngine::train(c)->digest() != shared_engine()->digest());
}

TEST_CASE("handle_simulate") {
  const auto& engine = *shared_engine();
  const auto& cohort = engine.train_cohort();

  SUBCASE("every section is populated and consistent") {
    for (Stage st : {Stage::IC, Stage::CC, Stage::ND}) {
      for (Strategy strategy : {Strategy::Imitation, Strategy::Optimal}) {
        SimulationRequest req = sample_request(st);
        req.strategy = strategy;
        const auto res = handle_simulate(engine, req);
        const auto idx = static_cast<std::size_t>(st);
        // Policy, attribution and branch agree on the probability.
        CHECK(res.attributions.final_probability == doctest::Approx(res.policy.probability).epsilon(1e-12));
        CHECK(res.attributions.completeness_residual() <= 1e-3);
        CHECK(res.branches[0].steps[idx].probability == res.policy.probability);
        CHECK(res.policy.embedding.size() == engine.config().policy.head_hidden);
        CHECK(res.selected == (res.policy.probability >= 0.5 ? 1u : 0u));
        CHECK_FALSE(res.branches[0].trajectory.sequence.at(st));
        CHECK(res.branches[1].trajectory.sequence.at(st));
        // Earlier decisions do not depend on the branch.
        for (std::size_t s = 0; s < idx; ++s) CHECK(res.branches[0].steps[s].decision == res.branches[1].steps[s].decision);
        // Waterfall ends at the final probability.
        REQUIRE_FALSE(res.waterfall.empty());
        CHECK(res.waterfall.back().end ==
              doctest::Approx(res.attributions.baseline_probability + res.attributions.total()).epsilon(1e-12));
        CHECK(res.novelty.percentile >= 0.0);
        CHECK(res.novelty.percentile <= 100.0);
        CHECK(res.neighbor_rate.ids.size() == engine.config().neighbors.n);
        // Curves share the 0-60 month grid.
        const std::size_t grid = serving_time_grid().size();
        for (std::size_t e = 0; e < kEndpoints; ++e) {
          for (const auto& b : res.branches) {
            CHECK(b.trajectory.survival[e].size() == grid);
            CHECK(b.ci.survival[e].size() == grid);
          }
          CHECK(res.km_treated[e].size() == grid);
          CHECK(res.km_untreated[e].size() == grid);
        }
        CHECK(res.symptoms.symptoms.size() == kSymptoms);
        CHECK(res.symptoms.treatment == (st == Stage::ND ? Stage::CC : st));
        CHECK(res.timing_ms.at("total") > 0.0);
      }
    }
  }
  SUBCASE("probabilities stay in [0,1]") {
    const json j = handle_simulate(engine, sample_request()).to_json();
    std::function<void(const json&, const std::string&)> walk = [&](const json& v, const std::string& key) {
      if (v.is_object()) {
        for (const auto& it : v.items()) walk(it.value(), it.key());
      } else if (v.is_array()) {
        for (const auto& x : v) walk(x, key);
      } else if (v.is_number_float()) {
        const bool prob = key == "probability" || key == "point" || key == "lower" || key == "upper" ||
                          key.find("rate") != std::string::npos || key.starts_with("neighbor_") ||
                          key == "primary" || key == "nodal" || key == "dlt" || key.ends_with("_probability");
        if (prob) {
          CHECK(v.get<double>() >= 0.0);
          CHECK(v.get<double>() <= 1.0);
        }
      }
    };
    walk(j.at("policy"), "");
    walk(j.at("branches"), "");
    walk(j.at("risks"), "");
    walk(j.at("survival").at("endpoints"), "");
    walk(j.at("neighbors").at("treatment_rate"), "rate");
  }
  SUBCASE("fixed decisions are used and tagged") {
    SimulationRequest req = sample_request(Stage::CC);
    req.fixed[0] = false;
    req.fixed[2] = false;
    const auto res = handle_simulate(engine, req);
    for (const auto& b : res.branches) {
      CHECK_FALSE(b.trajectory.sequence.ic());
      CHECK_FALSE(b.trajectory.sequence.nd());
      CHECK(b.steps[0].provenance == Provenance::UserFixed);
      CHECK(b.steps[2].provenance == Provenance::UserFixed);
      CHECK(b.trajectory.sequence.provenance[0] == Provenance::UserFixed);
    }
    CHECK(res.selected_branch().steps[1].provenance == Provenance::PolicyDecided);
    // Fixing the decision under study selects that branch.
    req.fixed[1] = !res.recommended;
    const auto forced = handle_simulate(engine, req);
    CHECK(forced.selected == (req.fixed[1].value() ? 1u : 0u));
    CHECK(forced.selected_branch().steps[1].provenance == Provenance::UserFixed);
  }
  SUBCASE("unfixed decisions follow the strategy head") {
    const auto res = handle_simulate(engine, sample_request(Stage::IC));
    for (const auto& b : res.branches) {
      for (std::size_t s = 1; s < kStages; ++s) {
        CHECK(b.steps[s].provenance == Provenance::PolicyDecided);
        CHECK(b.steps[s].decision == (b.steps[s].probability >= 0.5));
      }
    }
  }
  SUBCASE("observed transitions feed the rollout") {
    SimulationRequest req = sample_request(Stage::ND);
    req.fixed[0] = true;
    req.post_ic = TransitionState{Response::Complete, Response::Complete, {}};
    const auto res = handle_simulate(engine, req);
    for (const auto& b : res.branches) {
      CHECK(b.trajectory.post_ic_fed.primary == 3.0);
      CHECK(b.trajectory.post_ic.primary[3] == 1.0);
    }
    // The CC policy sees the observed response.
    StageContext ctx;
    ctx.decisions[0] = true;
    ctx.post_ic = TransitionSummary::from_state(*req.post_ic);
    CHECK(res.branches[0].steps[1].probability == engine.policy().predict(req.patient, ctx, Stage::CC, req.strategy).probability);
  }
  SUBCASE("neighbor evidence matches the cohort") {
    const auto res = handle_simulate(engine, sample_request());
    const auto& treated = engine.treated(Stage::CC);
    std::size_t n = 0;
    for (std::size_t id : res.neighbor_rate.ids) n += treated[id];
    CHECK(res.neighbor_rate.rate == doctest::Approx(static_cast<double>(n) / res.neighbor_rate.ids.size()));
    for (std::size_t id : res.ate.treated_ids) CHECK(treated[id] == 1);
    for (std::size_t id : res.ate.untreated_ids) CHECK(treated[id] == 0);
    if (!res.ate.treated_ids.empty()) {
      double ft = 0.0;
      for (std::size_t id : res.ate.treated_ids) ft += cohort[id].outcome.feeding_tube;
      CHECK(res.risks[0].neighbor_treated == doctest::Approx(ft / res.ate.treated_ids.size()));
      CHECK(res.km_treated[0][0] == 1.0);
    }
    CHECK(res.risks[0].outcome == "feeding_tube");
    CHECK(res.risks[0].twin_treated.point == res.branches[1].ci.feeding_tube.point);
    CHECK(res.risks[1].twin_untreated.point == res.branches[0].ci.aspiration.point);
  }
  SUBCASE("same request seed, same response, across threads") {
    const std::string ref = without_timing(handle_simulate(engine, sample_request()).to_json());
    std::vector<std::string> out(4);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < out.size(); ++i) {
      threads.emplace_back([&, i] { out[i] = without_timing(handle_simulate(engine, sample_request()).to_json()); });
    }
    for (auto& t : threads) t.join();
    for (const auto& o : out) CHECK(o == ref);
    SimulationRequest other = sample_request();
    other.seed = 100;
    CHECK(without_timing(handle_simulate(engine, other).to_json()) != ref);
  }
  SUBCASE("invalid features") {
    SimulationRequest req = sample_request();
    req.patient.n_stage = 5;
    CHECK_THROWS_AS(handle_simulate(engine, req), ValidationError);
  }
}

TEST_CASE("evaluation report") {
  const auto& engine = *shared_engine();
  const MetricReport r = evaluate_engine(engine, engine.eval_cohort());
  for (const char* output : {"IC", "CC", "ND"}) {
    CHECK(r.find("policy_imitation", output, "auc"));
    CHECK(r.find("policy_optimal", output, "f1"));
  }
  CHECK(r.find("static", "feeding_tube", "auc"));
  CHECK(r.find("post_cc", "primary_response", "auc_weighted"));
  CHECK(r.find("survival", "OS", "auc@48"));
  for (const auto& row : r.rows) {
    if (!row.value) continue;
    CHECK(*row.value >= 0.0);
    CHECK(*row.value <= 1.0);
  }
  CHECK_THROWS_AS(evaluate_engine(engine, {}), UsageError);
}

TEST_CASE("API service") {
  const ApiService service(shared_engine());
  const json body = request_to_json(sample_request());

  SUBCASE("routes") {
    const auto ok = service.handle("POST", "/api/simulate", body.dump());
    CHECK(ok.status == 200);
    CHECK(json::parse(ok.body).at("schema_version") == kApiSchemaVersion);
    CHECK(service.handle("GET", "/api/schema", "").status == 200);
    CHECK(json::parse(service.handle("GET", "/api/schema", "").body).at("features").size() == 16);
    const auto info = json::parse(service.handle("GET", "/api/model-info", "").body);
    CHECK(info.at("bundle_digest") == shared_engine()->digest());
    CHECK(info.contains("data_provenance"));
    CHECK(service.handle("GET", "/api/simulate", "").status == 405);
    CHECK(service.handle("GET", "/api/nothing", "").status == 404);
  }
  SUBCASE("errors") {
    CHECK(service.handle("POST", "/api/simulate", "{not json").status == 400);
    json bad = body;
    bad["patient"]["t_stage"] = 7;
    const auto r = service.handle("POST", "/api/simulate", bad.dump());
    CHECK(r.status == 422);
    CHECK(json::parse(r.body).at("diagnostics").at(0).at("field") == "patient.t_stage");
    const ApiService empty;
    CHECK(empty.handle("POST", "/api/simulate", body.dump()).status == 503);
    CHECK(empty.handle("GET", "/api/model-info", "").status == 503);
    const auto health = json::parse(empty.handle("GET", "/api/health", "").body);
    CHECK(health.at("bundle_loaded") == false);
    CHECK(health.at("failures") == 1);
  }
  SUBCASE("over HTTP") {
    HttpServer server(service);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread t([&] { server.listen(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    const auto health = client.Get("/api/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body).at("status") == "ok");
    const auto sim = client.Post("/api/simulate", body.dump(), "application/json");
    REQUIRE(sim);
    CHECK(sim->status == 200);
    CHECK(without_timing(json::parse(sim->body)) == without_timing(handle_simulate(*shared_engine(), sample_request()).to_json()));
    server.stop();
    t.join();
  }
}
