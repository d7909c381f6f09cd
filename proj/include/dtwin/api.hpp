#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtwin/cohort.hpp"
#include "dtwin/engine.hpp"
#include "dtwin/explain.hpp"
#include "dtwin/neighbors.hpp"
#include "dtwin/simulator.hpp"
#include "dtwin/symptoms.hpp"

namespace dtwin {

// Version of the request/response/schema JSON documents.
inline constexpr int kApiSchemaVersion = 1;

nlohmann::json patient_to_json(const PatientFeatures& p);
// Fields absent from `j` keep the PatientFeatures defaults. Type errors,
// unknown keys and range violations are collected, each field prefixed
// with `path`.
PatientFeatures patient_from_json(const nlohmann::json& j, std::vector<Diagnostic>& diagnostics,
                                  const std::string& path = "patient.");
PatientFeatures patient_from_json(const nlohmann::json& j);  // throws ValidationError

nlohmann::json transition_to_json(const TransitionState& t);

struct SimulationRequest {
  PatientFeatures patient;
  Strategy strategy = Strategy::Imitation;
  Stage decision = Stage::CC;
  std::array<std::optional<bool>, kStages> fixed{};
  // Observed responses after IC / CC. Each needs that stage's decision
  // fixed, and must be stable with no toxicity when the decision is no.
  std::optional<TransitionState> post_ic;
  std::optional<TransitionState> post_cc;
  double ci_level = kDefaultCiLevel;
  std::optional<std::uint64_t> seed;
};

SimulationRequest request_from_json(const nlohmann::json& j);  // throws ValidationError
nlohmann::json request_to_json(const SimulationRequest& r);

struct DecisionStep {
  Stage stage = Stage::IC;
  bool decision = false;
  Provenance provenance = Provenance::PolicyDecided;
  double probability = 0.5;  // selected strategy head on this path
};

// One value of the decision under study, with the other decisions resolved.
struct Branch {
  bool treated = false;
  std::array<DecisionStep, kStages> steps;
  Trajectory trajectory;
  OutcomeCI ci;
};

struct RiskRow {
  std::string outcome;
  PredictionWithCI twin_treated;
  PredictionWithCI twin_untreated;
  double neighbor_treated = 0.0;  // NaN without matched members
  double neighbor_untreated = 0.0;
};

struct SimulationResponse {
  SimulationRequest request;
  std::uint64_t seed = 0;
  PolicyOutput policy;  // the decision under study
  bool recommended = false;
  std::size_t selected = 0;       // index into branches
  std::array<Branch, 2> branches;  // [0] untreated, [1] treated
  AttributionSet attributions;
  std::vector<WaterfallRow> waterfall;
  NoveltyRating novelty;
  NeighborRate neighbor_rate;
  AteEstimate ate;  // columns feeding tube, aspiration
  std::array<std::vector<double>, kEndpoints> km_treated;
  std::array<std::vector<double>, kEndpoints> km_untreated;
  std::vector<RiskRow> risks;
  SymptomPrediction symptoms;
  std::map<std::string, double> timing_ms;

  const Branch& selected_branch() const { return branches[selected]; }
  nlohmann::json to_json() const;
};

// Resolves the decisions on both branches (fixed values win, otherwise the
// selected strategy head at 0.5), rolls them out with MC-dropout intervals,
// and adds attributions, novelty, neighbor evidence and symptoms.
SimulationResponse handle_simulate(const TwinEngine& engine, const SimulationRequest& request);

// Feature metadata for the input panel.
nlohmann::json api_schema();
// Data provenance, model details and limitations.
nlohmann::json model_info(const TwinEngine& engine);

}  // namespace dtwin
