#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtwin/autodiff.hpp"
#include "dtwin/cohort.hpp"
#include "dtwin/encoding.hpp"
#include "dtwin/nn.hpp"
#include "dtwin/simulator.hpp"
#include "dtwin/training.hpp"

namespace dtwin {

enum class Strategy { Imitation, Optimal };
const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);

// standard: the patient is the query over the stored cohort memory.
// paper: cohort rows are the queries and the patient supplies the only key
// and value, so attention reduces to the patient's value projection.
enum class AttentionOrientation { Standard, Paper };
AttentionOrientation parse_attention_orientation(const std::string& s);

struct TripletConfig {
  double w1 = 1.0;  // BCE weight
  double w2 = 0.2;  // triplet weight
  double margin = 1.0;
};

struct PolicyConfig {
  std::size_t width = 1000;
  std::size_t heads = 4;
  std::size_t ffn_width = 1000;
  std::size_t head_hidden = 20;
  double input_dropout = 0.10;
  double head_dropout = 0.25;
  AttentionOrientation orientation = AttentionOrientation::Standard;
  TripletConfig triplet;
  double shuffle_probability = 0.25;
  bool freeze_encoder = false;  // train the heads only
  TrainConfig train;
};

// Binary outcome probabilities: feeding tube, aspiration, then five DLT types
// after IC and five after CC.
inline constexpr std::size_t kObjectiveBinaryOutcomes = 12;

struct OptimalObjectiveWeights {
  double w_tox = 1.0;
  double w_s = 1.0;
  std::array<double, kObjectiveBinaryOutcomes> w_z;
  std::array<double, kEndpoints> w_o;

  OptimalObjectiveWeights() {
    w_z.fill(1.0);
    w_o.fill(1.0);
  }
  void validate() const;
};

// L = w_tox sum_z w_z P(z) + w_s sum_o w_o / median_months(o).
double optimal_objective(const Trajectory& t, const OptimalObjectiveWeights& w);

struct OptimalChoice {
  TreatmentSequence sequence;
  std::array<double, kSequences> objective{};  // by sequence index
};

// Exhaustive search over all 8 sequences in expected mode. Ties go to fewer
// treatments, then no before yes in stage order.
OptimalChoice compute_optimal_label(const PatientSimulator& sim, const PatientFeatures& p,
                                    const OptimalObjectiveWeights& w);
std::vector<TreatmentSequence> compute_optimal_labels(const PatientSimulator& sim, const Cohort& cohort,
                                                      const OptimalObjectiveWeights& w);

struct PolicyOutput {
  double probability = 0.5;
  Stage stage = Stage::IC;
  Strategy strategy = Strategy::Imitation;
  std::vector<double> embedding;
};

class PolicyModel {
 public:
  struct Outputs {
    Var logit;      // [m,1]
    Var embedding;  // [m,head_hidden], before head dropout
  };

  PolicyModel() = default;
  // Fresh weights; `memory` is the training cohort attended over at each stage.
  PolicyModel(const PolicyConfig& config, FeatureEncoder encoder, const Cohort& memory, std::uint64_t seed);
  // Rebinds to stored parameters and memory (bundle load).
  PolicyModel(const PolicyConfig& config, FeatureEncoder encoder, std::array<Tensor, kStages> memory,
              ParameterSet params);
  PolicyModel(const PolicyModel& other);
  PolicyModel& operator=(const PolicyModel& other);
  PolicyModel(PolicyModel&&) noexcept = default;
  PolicyModel& operator=(PolicyModel&&) noexcept = default;

  // Joint training of both heads on ground truth and optimal labels.
  static PolicyModel fit(const Cohort& train, const FeatureEncoder& encoder,
                         const std::vector<TreatmentSequence>& optimal_labels, const PolicyConfig& config,
                         std::uint64_t seed, TrainHistory* history = nullptr);
  // Continues training an existing model (used with freeze_encoder).
  void train(const Cohort& train, const std::vector<TreatmentSequence>& optimal_labels, const PolicyConfig& config,
             std::uint64_t seed, TrainHistory* history = nullptr);

  bool trained() const noexcept { return trained_; }
  const PolicyConfig& config() const noexcept { return config_; }
  const FeatureEncoder& encoder() const noexcept { return encoder_; }
  const Tensor& memory(Stage s) const { return memory_[static_cast<std::size_t>(s)]; }
  const std::array<Tensor, kStages>& memory() const noexcept { return memory_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  static bool is_encoder_parameter(const std::string& name);

  // Shared encoder output [m,width]; rows are grouped by `stages`.
  Var encode(Graph& g, Var x, std::span<const Stage> stages) const;
  Outputs head(Graph& g, Var h, Strategy s) const;
  Outputs forward(Graph& g, Var x, std::span<const Stage> stages, Strategy s) const;

  std::vector<PolicyOutput> predict_rows(const Tensor& x, std::span<const Stage> stages, Strategy s) const;
  // Requires the context for the stage: CC needs the IC decision and post-IC
  // transition, ND additionally the CC decision and post-CC transition.
  PolicyOutput predict(const PatientFeatures& p, const StageContext& ctx, Stage stage, Strategy s) const;

 private:
  void bind();
  Var memory_projection(Graph& g, Stage s, const Linear& proj) const;
  PolicyConfig config_;
  FeatureEncoder encoder_;
  std::array<Tensor, kStages> memory_;
  ParameterSet params_;
  Linear input_;
  Parameter* position_ = nullptr;  // [3, width]
  MultiHeadAttention attention_;
  LayerNorm norm1_, norm2_;
  Linear ffn1_, ffn2_;
  std::array<Linear, 2> head_hidden_, head_out_;
  bool trained_ = false;
};

// Column-shuffle augmentation: each pre-treatment feature group is permuted
// across patients with probability p, the same permutation in every stage
// tensor. Decision and transition slots are copied unchanged.
void shuffle_pretreatment_columns(const std::array<Tensor, kStages>& in, std::array<Tensor, kStages>& out, double p,
                                  std::mt19937_64& rng);

// Missing stage context fields for a policy query ("ic decision", ...).
std::vector<std::string> missing_policy_context(const StageContext& ctx, Stage stage);

// Optimal labels from the (frozen) simulator, then joint training.
PolicyModel fit_policy(const Cohort& train, const Simulator& sim, const PolicyConfig& config,
                       const OptimalObjectiveWeights& weights, std::uint64_t seed, TrainHistory* history = nullptr);

}  // namespace dtwin
