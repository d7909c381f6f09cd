#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dtwin/autodiff.hpp"
#include "dtwin/cohort.hpp"
#include "dtwin/encoding.hpp"
#include "dtwin/nn.hpp"
#include "dtwin/survival.hpp"
#include "dtwin/training.hpp"

namespace dtwin {

struct DropoutSpec {
  double input = 0.10;
  double hidden = 0.50;  // after the last hidden layer
};

struct SimulatorConfig {
  std::size_t transition_hidden = 500;
  std::size_t survival_hidden = 100;
  std::size_t mixture_components = 6;
  DropoutSpec dropout;
  TrainConfig train;
};

struct PredictionWithCI {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t samples = 0;
  double level = 0.95;
};

inline constexpr std::size_t kMinMcSamples = 20;
inline constexpr double kDefaultCiLevel = 0.95;

// Mean and type-7 quantiles at (1 -/+ level)/2; bounds are clamped so they
// bracket the mean. Needs at least 20 samples and level in (0, 1).
PredictionWithCI summarize_samples(std::span<const double> samples, double level);

// Distribution over the transition after a stage.
struct TransitionPrediction {
  std::array<double, 4> primary{};  // progressive, stable, partial, complete
  std::array<double, 4> nodal{};
  std::array<double, kDltTypes> dlt{};

  static TransitionPrediction forced_stable();
  static TransitionPrediction point_mass(const TransitionState& s);
  TransitionSummary expected() const;
  TransitionState most_likely() const;
  TransitionState sample(std::mt19937_64& rng) const;
};

// Fully connected ReLU trunk with input dropout and dropout after the last
// hidden layer.
class MlpTrunk {
 public:
  MlpTrunk() = default;
  MlpTrunk(ParameterSet& params, const std::string& name, std::size_t in, std::vector<std::size_t> hidden,
           std::mt19937_64& rng);
  MlpTrunk(ParameterSet& params, const std::string& name, std::size_t layers);
  Var operator()(Graph& g, Var x, const DropoutSpec& dropout) const;
  std::size_t out_features() const { return layers_.back().out_features(); }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  std::vector<Linear> layers_;
};

// Post-IC or post-CC transition: MLP with the stage decision concatenated at
// the penultimate layer, two 4-way softmax heads and five sigmoid DLT heads.
class TransitionModel {
 public:
  struct Outputs {
    Var primary;  // probabilities [n,4]
    Var nodal;
    Var dlt;  // [n,5]
    Var primary_logits;
    Var nodal_logits;
    Var dlt_logits;
  };

  TransitionModel() = default;
  TransitionModel(Stage stage, const SimulatorConfig& config, std::uint64_t seed);
  // Binds to an existing parameter set (bundle load).
  TransitionModel(Stage stage, const SimulatorConfig& config, ParameterSet params);
  TransitionModel(const TransitionModel& other);
  TransitionModel& operator=(const TransitionModel& other);
  TransitionModel(TransitionModel&&) noexcept = default;
  TransitionModel& operator=(TransitionModel&&) noexcept = default;

  static TransitionModel fit(const Cohort& train, const FeatureEncoder& encoder, Stage stage,
                             const SimulatorConfig& config, std::uint64_t seed, TrainHistory* history = nullptr);

  bool trained() const noexcept { return trained_; }
  void mark_trained() { trained_ = true; }
  Stage stage() const noexcept { return stage_; }

  Outputs forward(Graph& g, Var x, Var decision) const;
  // x: [n, kEncodedWidth], one decision per row. IC rows with decision 0 are
  // forced to stable responses and no toxicity.
  std::vector<TransitionPrediction> predict(const Tensor& x, std::span<const double> decisions) const;
  // Training-data tensors for a stage: inputs, decision column, targets.
  static Tensor stage_inputs(const Cohort& c, const FeatureEncoder& encoder, Stage stage);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  static std::string prefix(Stage stage);

 private:
  void bind();
  Stage stage_ = Stage::IC;
  SimulatorConfig config_;
  ParameterSet params_;
  MlpTrunk trunk_;
  Linear primary_, nodal_, dlt_;
  bool trained_ = false;
};

// Feeding tube and aspiration risk at six months.
class StaticOutcomeModel {
 public:
  StaticOutcomeModel() = default;
  StaticOutcomeModel(const SimulatorConfig& config, std::uint64_t seed);
  StaticOutcomeModel(const SimulatorConfig& config, ParameterSet params);
  StaticOutcomeModel(const StaticOutcomeModel& other);
  StaticOutcomeModel& operator=(const StaticOutcomeModel& other);
  StaticOutcomeModel(StaticOutcomeModel&&) noexcept = default;
  StaticOutcomeModel& operator=(StaticOutcomeModel&&) noexcept = default;

  static StaticOutcomeModel fit(const Cohort& train, const FeatureEncoder& encoder, const SimulatorConfig& config,
                                std::uint64_t seed, TrainHistory* history = nullptr);

  bool trained() const noexcept { return trained_; }
  void mark_trained() { trained_ = true; }

  // Logits [n,2]: feeding tube, aspiration.
  Var forward(Graph& g, Var x, Var decisions) const;
  // Probabilities [n,2] without dropout.
  Tensor predict(const Tensor& x, const Tensor& decisions) const;
  // MC-dropout draws for one row: [samples, 2].
  Tensor sample(const Tensor& x_row, const Tensor& decision_row, std::size_t samples, std::uint64_t seed) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  void bind();
  SimulatorConfig config_;
  ParameterSet params_;
  MlpTrunk trunk_;
  Linear head_;
  bool trained_ = false;
};

// PredictionWithCI for one static head from MC-dropout draws.
PredictionWithCI predict_with_ci(const StaticOutcomeModel& model, const Tensor& x_row, const Tensor& decision_row,
                                 std::size_t head, std::size_t samples, double level, std::uint64_t seed);

// Deep survival machine: per endpoint a K-component log-normal mixture.
class SurvivalModel {
 public:
  struct EndpointOutputs {
    Var log_weights;  // [n,K]
    Var mu;
    Var sigma;
  };
  using Outputs = std::array<EndpointOutputs, kEndpoints>;

  SurvivalModel() = default;
  SurvivalModel(const SimulatorConfig& config, std::uint64_t seed);
  SurvivalModel(const SimulatorConfig& config, ParameterSet params);
  SurvivalModel(const SurvivalModel& other);
  SurvivalModel& operator=(const SurvivalModel& other);
  SurvivalModel(SurvivalModel&&) noexcept = default;
  SurvivalModel& operator=(SurvivalModel&&) noexcept = default;

  static SurvivalModel fit(const Cohort& train, const FeatureEncoder& encoder, const SimulatorConfig& config,
                           std::uint64_t seed, TrainHistory* history = nullptr);

  bool trained() const noexcept { return trained_; }
  void mark_trained() { trained_ = true; }

  Outputs forward(Graph& g, Var x, Var decisions) const;
  // Mean negative censored log-likelihood over rows, summed over endpoints.
  static Var negative_log_likelihood(Graph& g, const Outputs& out, const Tensor& times, const Tensor& events);
  // Mixtures per row and endpoint without dropout.
  std::vector<std::array<LogNormalMixture, kEndpoints>> predict(const Tensor& x, const Tensor& decisions) const;
  static std::array<LogNormalMixture, kEndpoints> mixtures_at(const Outputs& out, std::size_t row);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  void bind();
  SimulatorConfig config_;
  ParameterSet params_;
  MlpTrunk trunk_;
  std::array<std::array<Linear, 3>, kEndpoints> heads_;
  bool trained_ = false;
};

// Decisions of each record as an [n,3] tensor.
Tensor decision_matrix(const Cohort& c);
// [n,3] event times and event flags.
Tensor outcome_times(const Cohort& c);
Tensor outcome_events(const Cohort& c);

enum class RolloutMode { Expected, Sampled };

// Simulated treatment course for one patient and sequence.
struct Trajectory {
  TreatmentSequence sequence;
  TransitionPrediction post_ic;
  TransitionPrediction post_cc;
  TransitionSummary post_ic_fed;  // value fed to later models
  TransitionSummary post_cc_fed;
  double p_feeding_tube = 0.0;
  double p_aspiration = 0.0;
  std::array<LogNormalMixture, kEndpoints> mixtures;
  std::array<std::vector<double>, kEndpoints> survival;  // serving grid
  std::array<double, kEndpoints> median_months{};
};

struct OutcomeCI {
  PredictionWithCI feeding_tube;
  PredictionWithCI aspiration;
  std::array<std::vector<PredictionWithCI>, kEndpoints> survival;  // serving grid
};

// Anything that can roll a patient through a treatment sequence. The
// optimal-label search only depends on this interface.
class PatientSimulator {
 public:
  virtual ~PatientSimulator() = default;
  virtual std::vector<Trajectory> rollout_batch(std::span<const PatientFeatures> patients,
                                                std::span<const TreatmentSequence> sequences) const = 0;
  Trajectory rollout(const PatientFeatures& p, const TreatmentSequence& s) const;
};

class Simulator : public PatientSimulator {
 public:
  Simulator() = default;
  Simulator(FeatureEncoder encoder, SimulatorConfig config, TransitionModel post_ic, TransitionModel post_cc,
            StaticOutcomeModel static_model, SurvivalModel survival);

  static Simulator fit(const Cohort& train, const FeatureEncoder& encoder, const SimulatorConfig& config,
                       std::uint64_t seed);

  bool trained() const;
  const FeatureEncoder& encoder() const { return encoder_; }
  const SimulatorConfig& config() const { return config_; }
  const TransitionModel& post_ic() const { return post_ic_; }
  const TransitionModel& post_cc() const { return post_cc_; }
  const StaticOutcomeModel& static_model() const { return static_; }
  const SurvivalModel& survival() const { return survival_; }

  // Expected-mode rollout, batched over (patient, sequence) pairs.
  std::vector<Trajectory> rollout_batch(std::span<const PatientFeatures> patients,
                                        std::span<const TreatmentSequence> sequences) const override;
  // Single rollout; sampled mode draws concrete transitions from `rng`.
  Trajectory rollout_mode(const PatientFeatures& p, const TreatmentSequence& s, RolloutMode mode,
                          std::mt19937_64* rng = nullptr) const;
  // Expected-mode rollout where observed transitions replace predictions.
  Trajectory rollout_known(const PatientFeatures& p, const TreatmentSequence& s,
                           const std::optional<TransitionState>& post_ic,
                           const std::optional<TransitionState>& post_cc) const;
  // Transition distribution after `stage` (IC or CC) for a given context.
  TransitionPrediction predict_transition(const PatientFeatures& p, const StageContext& ctx, Stage stage,
                                          bool decision) const;
  // MC-dropout intervals on the outcome models at a trajectory's final state.
  OutcomeCI outcome_ci(const PatientFeatures& p, const Trajectory& t, std::size_t samples, double level,
                       std::uint64_t seed) const;

 private:
  void require_trained() const;
  FeatureEncoder encoder_;
  SimulatorConfig config_;
  TransitionModel post_ic_;
  TransitionModel post_cc_;
  StaticOutcomeModel static_;
  SurvivalModel survival_;
};

// Final-state context for the outcome models.
StageContext outcome_context(const TreatmentSequence& s, const TransitionSummary& post_ic,
                             const TransitionSummary& post_cc);

}  // namespace dtwin
