#include "dtwin/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "dtwin/error.hpp"
#include "dtwin/losses.hpp"
#include "dtwin/random.hpp"

namespace dtwin {

const char* strategy_name(Strategy s) { return s == Strategy::Imitation ? "imitation" : "optimal"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "imitation") return Strategy::Imitation;
  if (s == "optimal") return Strategy::Optimal;
  throw ConfigError("unknown strategy '" + s + "' (expected imitation or optimal)");
}

AttentionOrientation parse_attention_orientation(const std::string& s) {
  if (s == "standard") return AttentionOrientation::Standard;
  if (s == "paper") return AttentionOrientation::Paper;
  throw ConfigError("unknown attention_orientation '" + s + "' (expected standard or paper)");
}

// ------------------------------------------------------- optimal labels

void OptimalObjectiveWeights::validate() const {
  auto check = [](double v, const std::string& what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("objective weight " + what + " must be finite and >= 0");
  };
  check(w_tox, "w_tox");
  check(w_s, "w_s");
  bool any_z = false, any_o = false;
  for (std::size_t i = 0; i < w_z.size(); ++i) {
    check(w_z[i], "w_z[" + std::to_string(i) + "]");
    any_z = any_z || w_z[i] > 0.0;
  }
  for (std::size_t i = 0; i < w_o.size(); ++i) {
    check(w_o[i], "w_o[" + std::to_string(i) + "]");
    any_o = any_o || w_o[i] > 0.0;
  }
  if (!((w_tox > 0.0 && any_z) || (w_s > 0.0 && any_o))) throw ConfigError("objective weights are all zero");
}

double optimal_objective(const Trajectory& t, const OptimalObjectiveWeights& w) {
  std::array<double, kObjectiveBinaryOutcomes> p{};
  p[0] = t.p_feeding_tube;
  p[1] = t.p_aspiration;
  for (std::size_t k = 0; k < kDltTypes; ++k) {
    p[2 + k] = t.post_ic.dlt[k];
    p[2 + kDltTypes + k] = t.post_cc.dlt[k];
  }
  double tox = 0.0;
  for (std::size_t z = 0; z < p.size(); ++z) tox += w.w_z[z] * p[z];
  double surv = 0.0;
  for (std::size_t o = 0; o < kEndpoints; ++o) {
    if (w.w_o[o] != 0.0) surv += w.w_o[o] / t.median_months[o];
  }
  return w.w_tox * tox + w.w_s * surv;
}

namespace {

// Fewer treatments first, then no < yes in stage order.
bool fewer_treatments_first(const TreatmentSequence& a, const TreatmentSequence& b) {
  if (a.treatment_count() != b.treatment_count()) return a.treatment_count() < b.treatment_count();
  return a.decisions < b.decisions;
}

OptimalChoice choose(std::span<const Trajectory> rollouts, const OptimalObjectiveWeights& w) {
  OptimalChoice c;
  bool have = false;
  double best = 0.0;
  for (const auto& t : rollouts) {
    const double v = optimal_objective(t, w);
    if (!std::isfinite(v)) throw NumericError("optimal objective is not finite for sequence " + t.sequence.label());
    c.objective[t.sequence.index()] = v;
    if (!have || v < best || (v == best && fewer_treatments_first(t.sequence, c.sequence))) {
      best = v;
      c.sequence = t.sequence;
      have = true;
    }
  }
  for (auto& p : c.sequence.provenance) p = Provenance::PolicyDecided;
  return c;
}

std::vector<TreatmentSequence> all_sequences() {
  std::vector<TreatmentSequence> s;
  for (std::size_t i = 0; i < kSequences; ++i) s.push_back(TreatmentSequence::from_index(i));
  return s;
}

}  // namespace

OptimalChoice compute_optimal_label(const PatientSimulator& sim, const PatientFeatures& p,
                                    const OptimalObjectiveWeights& w) {
  w.validate();
  const std::vector<PatientFeatures> ps(kSequences, p);
  const auto seqs = all_sequences();
  const auto rollouts = sim.rollout_batch(ps, seqs);
  return choose(rollouts, w);
}

std::vector<TreatmentSequence> compute_optimal_labels(const PatientSimulator& sim, const Cohort& cohort,
                                                      const OptimalObjectiveWeights& w) {
  w.validate();
  const auto seqs = all_sequences();
  std::vector<PatientFeatures> ps;
  std::vector<TreatmentSequence> ss;
  ps.reserve(cohort.size() * kSequences);
  ss.reserve(cohort.size() * kSequences);
  for (const auto& r : cohort) {
    for (const auto& s : seqs) {
      ps.push_back(r.features);
      ss.push_back(s);
    }
  }
  const auto rollouts = sim.rollout_batch(ps, ss);
  std::vector<TreatmentSequence> out;
  out.reserve(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    out.push_back(choose(std::span<const Trajectory>(rollouts).subspan(i * kSequences, kSequences), w).sequence);
  }
  return out;
}

// ------------------------------------------------------------ PolicyModel

namespace {

const std::array<std::string, 2> kHeadNames = {"policy.imitation", "policy.optimal"};

std::size_t head_index(Strategy s) { return s == Strategy::Imitation ? 0 : 1; }

}  // namespace

PolicyModel::PolicyModel(const PolicyConfig& config, FeatureEncoder encoder, const Cohort& memory,
                         std::uint64_t seed)
    : config_(config), encoder_(std::move(encoder)) {
  if (memory.empty()) throw UsageError("policy memory cohort is empty");
  if (config.width % config.heads != 0) {
    throw ConfigError("policy width " + std::to_string(config.width) + " not divisible by " +
                      std::to_string(config.heads) + " heads");
  }
  for (std::size_t s = 0; s < kStages; ++s) memory_[s] = encoder_.encode_rows(memory, static_cast<Stage>(s));
  std::mt19937_64 rng(seed);
  const std::size_t d = config.width;
  input_ = Linear(params_, "policy.input", kEncodedWidth, d, rng);
  Tensor pos = Tensor::matrix(kStages, d);
  for (double& v : pos.data()) v = 0.02 * standard_normal(rng);
  position_ = &params_.add("policy.position", pos);
  attention_ = MultiHeadAttention(params_, "policy.attention", d, config.heads, rng);
  norm1_ = LayerNorm(params_, "policy.norm1", d);
  ffn1_ = Linear(params_, "policy.ffn1", d, config.ffn_width, rng);
  ffn2_ = Linear(params_, "policy.ffn2", config.ffn_width, d, rng);
  norm2_ = LayerNorm(params_, "policy.norm2", d);
  for (std::size_t k = 0; k < 2; ++k) {
    head_hidden_[k] = Linear(params_, kHeadNames[k] + ".hidden", d, config.head_hidden, rng);
    head_out_[k] = Linear(params_, kHeadNames[k] + ".out", config.head_hidden, 1, rng);
  }
}

PolicyModel::PolicyModel(const PolicyConfig& config, FeatureEncoder encoder, std::array<Tensor, kStages> memory,
                         ParameterSet params)
    : config_(config), encoder_(std::move(encoder)), memory_(std::move(memory)), params_(std::move(params)),
      trained_(true) {
  bind();
}

PolicyModel::PolicyModel(const PolicyModel& other)
    : config_(other.config_), encoder_(other.encoder_), memory_(other.memory_), params_(other.params_),
      trained_(other.trained_) {
  if (params_.size() > 0) bind();
}

PolicyModel& PolicyModel::operator=(const PolicyModel& other) {
  if (this != &other) {
    PolicyModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void PolicyModel::bind() {
  input_ = Linear(params_, "policy.input");
  position_ = &params_.get("policy.position");
  attention_ = MultiHeadAttention(params_, "policy.attention", config_.heads);
  norm1_ = LayerNorm(params_, "policy.norm1", bind_existing);
  ffn1_ = Linear(params_, "policy.ffn1");
  ffn2_ = Linear(params_, "policy.ffn2");
  norm2_ = LayerNorm(params_, "policy.norm2", bind_existing);
  for (std::size_t k = 0; k < 2; ++k) {
    head_hidden_[k] = Linear(params_, kHeadNames[k] + ".hidden");
    head_out_[k] = Linear(params_, kHeadNames[k] + ".out");
  }
}

bool PolicyModel::is_encoder_parameter(const std::string& name) {
  return name.rfind("policy.imitation", 0) != 0 && name.rfind("policy.optimal", 0) != 0;
}

// Keys or values for the stored cohort at one stage. Reassociated as
// X (W_in W_p) + ((b_in + pos_s) W_p + b_p), which is the projection of the
// embedded memory rows at a fraction of the cost when width >> 54.
Var PolicyModel::memory_projection(Graph& g, Stage s, const Linear& proj) const {
  Var w_in = g.param(input_.weight());
  Var b_in = g.param(input_.bias());
  Var w_p = g.param(proj.weight());
  Var b_p = g.param(proj.bias());
  const std::size_t si = static_cast<std::size_t>(s);
  Var pos = ad::slice_rows(g.param(*position_), si, 1);
  Var offset = ad::add(ad::matmul(ad::add(b_in, pos), w_p), b_p);
  return ad::add(ad::matmul(g.constant(memory_[si]), ad::matmul(w_in, w_p)), offset);
}

Var PolicyModel::encode(Graph& g, Var x, std::span<const Stage> stages) const {
  if (x.rows() != stages.size()) throw ShapeError("policy encode: one stage per input row required");
  if (x.cols() != kEncodedWidth) throw ShapeError("policy encode: expected " + std::to_string(kEncodedWidth) + " columns");
  Graph::Scope scope(g, "policy");
  std::vector<std::size_t> stage_ids(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) stage_ids[i] = static_cast<std::size_t>(stages[i]);
  Var q0 = ad::add(input_(g, ad::dropout(x, config_.input_dropout)), ad::gather_rows(g.param(*position_), stage_ids));

  Var attended;
  if (config_.orientation == AttentionOrientation::Paper) {
    attended = attention_.out_proj()(g, attention_.value_proj()(g, q0));
  } else {
    // Attend per stage against that stage's memory, then restore row order.
    std::vector<Var> blocks;
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < kStages; ++s) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < stage_ids.size(); ++i) {
        if (stage_ids[i] == s) rows.push_back(i);
      }
      if (rows.empty()) continue;
      const bool contiguous = rows.size() == stage_ids.size() || (rows.back() - rows.front() + 1 == rows.size());
      Var qs = contiguous ? ad::slice_rows(q0, rows.front(), rows.size()) : ad::gather_rows(q0, rows);
      Var k = memory_projection(g, static_cast<Stage>(s), attention_.key_proj());
      Var v = memory_projection(g, static_cast<Stage>(s), attention_.value_proj());
      blocks.push_back(multi_head_attention(attention_.query_proj()(g, qs), k, v, config_.heads).output);
      order.insert(order.end(), rows.begin(), rows.end());
    }
    Var stacked = blocks.size() == 1 ? blocks[0] : ad::concat_rows(blocks);
    bool identity = true;
    for (std::size_t i = 0; i < order.size(); ++i) identity = identity && order[i] == i;
    if (!identity) {
      std::vector<std::size_t> inverse(order.size());
      for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
      stacked = ad::gather_rows(stacked, inverse);
    }
    attended = attention_.out_proj()(g, stacked);
  }
  Var h1 = norm1_(g, ad::add(q0, attended));
  Var ff = ffn2_(g, ad::relu(ffn1_(g, h1)));
  return norm2_(g, ad::add(h1, ff));
}

PolicyModel::Outputs PolicyModel::head(Graph& g, Var h, Strategy s) const {
  const std::size_t k = head_index(s);
  Outputs o;
  // No activation: ReLU units here can all die under the triplet term.
  o.embedding = head_hidden_[k](g, h);
  o.logit = head_out_[k](g, ad::dropout(o.embedding, config_.head_dropout));
  return o;
}

PolicyModel::Outputs PolicyModel::forward(Graph& g, Var x, std::span<const Stage> stages, Strategy s) const {
  return head(g, encode(g, x, stages), s);
}

std::vector<PolicyOutput> PolicyModel::predict_rows(const Tensor& x, std::span<const Stage> stages,
                                                    Strategy s) const {
  if (!trained_) throw UsageError("policy model used before training");
  Graph g(false);
  Outputs o = forward(g, g.constant(x), stages, s);
  std::vector<PolicyOutput> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i].probability = sigmoid_value(o.logit.value()(i, 0));
    out[i].stage = stages[i];
    out[i].strategy = s;
    out[i].embedding = o.embedding.value().row_vector(i);
  }
  return out;
}

std::vector<std::string> missing_policy_context(const StageContext& ctx, Stage stage) {
  std::vector<std::string> missing;
  if (stage >= Stage::CC) {
    if (!ctx.decisions[0]) missing.push_back("ic decision");
    if (!ctx.post_ic) missing.push_back("post_ic transition");
  }
  if (stage >= Stage::ND) {
    if (!ctx.decisions[1]) missing.push_back("cc decision");
    if (!ctx.post_cc) missing.push_back("post_cc transition");
  }
  return missing;
}

PolicyOutput PolicyModel::predict(const PatientFeatures& p, const StageContext& ctx, Stage stage, Strategy s) const {
  const auto missing = missing_policy_context(ctx, stage);
  if (!missing.empty()) {
    std::string msg = "missing stage context for " + std::string(stage_name(stage)) + ":";
    for (const auto& m : missing) msg += " " + m;
    throw UsageError(msg);
  }
  // Only context visible at the stage is encoded.
  StageContext visible;
  if (stage >= Stage::CC) {
    visible.decisions[0] = ctx.decisions[0];
    visible.post_ic = ctx.post_ic;
  }
  if (stage >= Stage::ND) {
    visible.decisions[1] = ctx.decisions[1];
    visible.post_cc = ctx.post_cc;
  }
  Tensor x = Tensor::matrix(1, kEncodedWidth);
  encoder_.encode_into(p, visible, x.data());
  const Stage st[] = {stage};
  return predict_rows(x, st, s)[0];
}

// --------------------------------------------------------------- training

void shuffle_pretreatment_columns(const std::array<Tensor, kStages>& original, std::array<Tensor, kStages>& out,
                                  double p, std::mt19937_64& rng) {
  out = original;
  const std::size_t n = original[0].rows();
  for (const auto& group : feature_groups()) {
    if (group.slots.front() >= kBaseWidth) continue;
    if (!bernoulli(rng, p)) continue;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_range(perm.begin(), perm.end(), rng);
    for (std::size_t s = 0; s < kStages; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t slot : group.slots) out[s](i, slot) = original[s](perm[i], slot);
      }
    }
  }
}


namespace {

// Marks encoder parameters non-trainable for its lifetime.
class EncoderFreeze {
 public:
  EncoderFreeze(ParameterSet& params, bool active) : params_(params) {
    if (!active) return;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (PolicyModel::is_encoder_parameter(params.at(i).name) && params.at(i).trainable) {
        params.at(i).trainable = false;
        frozen_.push_back(i);
      }
    }
  }
  ~EncoderFreeze() {
    for (std::size_t i : frozen_) params_.at(i).trainable = true;
  }
  EncoderFreeze(const EncoderFreeze&) = delete;
  EncoderFreeze& operator=(const EncoderFreeze&) = delete;

 private:
  ParameterSet& params_;
  std::vector<std::size_t> frozen_;
};

// Rows [stage IC block; CC block; ND block] for the given patients.
Tensor stack_stages(const std::array<Tensor, kStages>& x, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(kStages * rows.size(), kEncodedWidth);
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = x[s].row_span(rows[i]);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((s * rows.size() + i) * kEncodedWidth));
    }
  }
  return out;
}

// Per patient: w1 * sum over stages of BCE + w2 * triplet on the
// concatenated stage embeddings, averaged over patients.
Var head_loss(Graph& g, const PolicyModel::Outputs& o, const Tensor& targets, std::span<const std::size_t> groups,
              const TripletConfig& tc) {
  const std::size_t m = groups.size();
  Var bce = ad::scale(bce_with_logits(o.logit, g.constant(targets)), static_cast<double>(kStages));
  Var loss = ad::scale(bce, tc.w1);
  if (tc.w2 == 0.0) return loss;
  const Var parts[] = {ad::slice_rows(o.embedding, 0, m), ad::slice_rows(o.embedding, m, m),
                       ad::slice_rows(o.embedding, 2 * m, m)};
  Var e = ad::concat_cols(parts);
  std::vector<std::size_t> anchors, positives, negatives;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> same, other;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      (groups[j] == groups[i] ? same : other).push_back(j);
    }
    if (same.empty() || other.empty()) continue;
    anchors.push_back(i);
    positives.push_back(same[uniform_index(g.rng(), same.size())]);
    negatives.push_back(other[uniform_index(g.rng(), other.size())]);
  }
  if (anchors.empty()) return loss;
  Var t = triplet_margin(ad::gather_rows(e, anchors), ad::gather_rows(e, positives), ad::gather_rows(e, negatives),
                         tc.margin);
  return ad::add(loss, ad::scale(ad::sum(t), tc.w2 / static_cast<double>(m)));
}

}  // namespace

void PolicyModel::train(const Cohort& train, const std::vector<TreatmentSequence>& optimal_labels,
                        const PolicyConfig& config, std::uint64_t seed, TrainHistory* history) {
  if (optimal_labels.size() != train.size()) throw UsageError("one optimal label per training record required");
  if (config.triplet.w1 < 0.0 || config.triplet.w2 < 0.0) throw ConfigError("triplet weights must be >= 0");
  config_.triplet = config.triplet;
  config_.shuffle_probability = config.shuffle_probability;
  config_.freeze_encoder = config.freeze_encoder;
  config_.train = config.train;

  const std::size_t n = train.size();
  std::array<Tensor, kStages> x;
  for (std::size_t s = 0; s < kStages; ++s) x[s] = encoder_.encode_rows(train, static_cast<Stage>(s));
  Tensor y_imit = Tensor::matrix(n, kStages), y_opt = Tensor::matrix(n, kStages);
  std::vector<std::size_t> groups(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < kStages; ++s) {
      y_imit(i, s) = train[i].sequence.decisions[s] ? 1.0 : 0.0;
      y_opt(i, s) = optimal_labels[i].decisions[s] ? 1.0 : 0.0;
    }
    groups[i] = train[i].sequence.index();
  }
  std::array<Tensor, kStages> augmented;
  std::mt19937_64 aug_rng(derive_seed(seed, 0xa06));
  shuffle_pretreatment_columns(x, augmented, config.shuffle_probability, aug_rng);

  auto stacked_targets = [&](const Tensor& y, std::span<const std::size_t> rows) {
    Tensor t = Tensor::matrix(kStages * rows.size(), 1);
    for (std::size_t s = 0; s < kStages; ++s) {
      for (std::size_t i = 0; i < rows.size(); ++i) t(s * rows.size() + i, 0) = y(rows[i], s);
    }
    return t;
  };

  auto loss = [&](Graph& g, std::span<const std::size_t> rows) {
    const std::size_t m = rows.size();
    // Validation uses unaugmented inputs for both heads.
    const Tensor xi = stack_stages(x, rows);
    const Tensor xo = g.training() ? stack_stages(augmented, rows) : xi;
    std::vector<Stage> stages;
    for (std::size_t s = 0; s < kStages; ++s) stages.insert(stages.end(), m, static_cast<Stage>(s));
    std::vector<std::size_t> grp(m);
    for (std::size_t i = 0; i < m; ++i) grp[i] = groups[rows[i]];
    Var h_imit, h_opt;
    if (g.training()) {
      // One encoder pass over both inputs shares the memory projections.
      const Var both[] = {g.constant(xi), g.constant(xo)};
      std::vector<Stage> st2 = stages;
      st2.insert(st2.end(), stages.begin(), stages.end());
      Var h = encode(g, ad::concat_rows(both), st2);
      h_imit = ad::slice_rows(h, 0, kStages * m);
      h_opt = ad::slice_rows(h, kStages * m, kStages * m);
    } else {
      h_imit = h_opt = encode(g, g.constant(xi), stages);
    }
    Var li = head_loss(g, head(g, h_imit, Strategy::Imitation), stacked_targets(y_imit, rows), grp, config.triplet);
    Var lo = head_loss(g, head(g, h_opt, Strategy::Optimal), stacked_targets(y_opt, rows), grp, config.triplet);
    return ad::add(li, lo);
  };
  auto hook = [&](std::size_t) { shuffle_pretreatment_columns(x, augmented, config.shuffle_probability, aug_rng); };

  TrainHistory h;
  {
    EncoderFreeze freeze(params_, config.freeze_encoder);
    h = fit_early_stopping(params_, n, config.train, derive_seed(seed, 2), loss, hook);
  }
  spdlog::info("policy model: {} epochs, best validation loss {:.4f}", h.val_loss.size(), h.val_loss[h.best_epoch]);
  if (history) *history = std::move(h);
  trained_ = true;
}

PolicyModel PolicyModel::fit(const Cohort& train, const FeatureEncoder& encoder,
                             const std::vector<TreatmentSequence>& optimal_labels, const PolicyConfig& config,
                             std::uint64_t seed, TrainHistory* history) {
  PolicyModel model(config, encoder, train, derive_seed(seed, 1));
  model.train(train, optimal_labels, config, seed, history);
  return model;
}

PolicyModel fit_policy(const Cohort& train, const Simulator& sim, const PolicyConfig& config,
                       const OptimalObjectiveWeights& weights, std::uint64_t seed, TrainHistory* history) {
  if (!sim.trained()) throw UsageError("fit_policy needs a trained simulator for optimal labels");
  const auto labels = compute_optimal_labels(sim, train, weights);
  return PolicyModel::fit(train, sim.encoder(), labels, config, seed, history);
}

}  // namespace dtwin
