#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "dtwin/bundle.hpp"
#include "dtwin/cohort.hpp"
#include "dtwin/encoding.hpp"
#include "dtwin/evaluation.hpp"
#include "dtwin/neighbors.hpp"
#include "dtwin/policy.hpp"
#include "dtwin/simulator.hpp"
#include "dtwin/symptoms.hpp"

namespace dtwin {

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::size_t cohort_size = 536;  // used when no cohort is supplied
  std::size_t symptom_cohort_size = kSymptomCohortSize;
  SimulatorConfig simulator;
  PolicyConfig policy;
  OptimalObjectiveWeights objective;
  SymptomConfig symptoms;
  NeighborConfig neighbors;
  std::size_t mc_samples = 100;
  std::size_t ig_steps = 256;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are a ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  // Narrow networks and short schedules for tests and quick looks.
  static PipelineConfig small();
};

inline constexpr std::size_t kStrategies = 2;
// Ground-truth outcomes compared by the ATE: feeding tube, aspiration.
inline constexpr std::size_t kAteOutcomes = 2;

// Trained twins plus everything precomputed for serving. Immutable once
// built; safe to share between request threads.
class TwinEngine {
 public:
  // generate (when `cohort` is empty) -> split -> simulator -> optimal
  // labels -> policy -> symptom model -> cohort embeddings.
  static std::shared_ptr<const TwinEngine> train(const PipelineConfig& config, Cohort cohort = {});
  static std::shared_ptr<const TwinEngine> from_bundle(const ModelBundle& bundle);
  static std::shared_ptr<const TwinEngine> load(const std::filesystem::path& path);

  ModelBundle to_bundle() const;

  const PipelineConfig& config() const noexcept { return config_; }
  const FeatureEncoder& encoder() const noexcept { return encoder_; }
  const Simulator& simulator() const noexcept { return simulator_; }
  const PolicyModel& policy() const noexcept { return policy_; }
  const SymptomModel& symptoms() const noexcept { return symptoms_; }
  const Cohort& train_cohort() const noexcept { return train_; }
  const Cohort& eval_cohort() const noexcept { return eval_; }
  const PatientFeatures& baseline() const noexcept { return baseline_; }
  const std::string& digest() const noexcept { return digest_; }

  // Training cohort views per stage (and strategy for embeddings).
  const Tensor& embeddings(Strategy s, Stage st) const { return embeddings_[idx(s)][idx(st)]; }
  const MahalanobisModel& novelty(Strategy s, Stage st) const { return novelty_[idx(s)][idx(st)]; }
  // Imitation-head propensities.
  const std::vector<double>& propensities(Stage st) const { return propensities_[idx(st)]; }
  const std::vector<int>& treated(Stage st) const { return treated_[idx(st)]; }
  // [n, 2]: feeding tube, aspiration.
  const Tensor& ate_outcomes() const noexcept { return ate_outcomes_; }

 private:
  template <typename E>
  static std::size_t idx(E e) {
    return static_cast<std::size_t>(e);
  }
  void derive_cohort_views();
  void compute_embeddings();

  PipelineConfig config_;
  FeatureEncoder encoder_;
  Simulator simulator_;
  PolicyModel policy_;
  SymptomModel symptoms_;
  Cohort train_, eval_;
  PatientFeatures baseline_;
  std::string digest_;
  std::array<std::array<Tensor, kStages>, kStrategies> embeddings_;
  std::array<std::array<MahalanobisModel, kStages>, kStrategies> novelty_;
  std::array<std::vector<double>, kStages> propensities_;
  std::array<std::vector<int>, kStages> treated_;
  Tensor ate_outcomes_;
};

// Appendix-style report on a cohort: transition, toxicity and survival
// models, both policy heads (optimal labels recomputed on the cohort).
MetricReport evaluate_engine(const TwinEngine& engine, const Cohort& cohort);

}  // namespace dtwin
