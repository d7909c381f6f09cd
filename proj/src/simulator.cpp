#include "dtwin/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

#include "dtwin/error.hpp"
#include "dtwin/losses.hpp"
#include "dtwin/random.hpp"

namespace dtwin {

namespace {

constexpr double kSigmaFloor = 1e-3;
const std::array<std::string, kEndpoints> kEndpointKeys = {"os", "lrc", "fdm"};
const std::array<std::string, 3> kMixtureParts = {"logits", "mu", "sigma"};

Tensor replicate_row(const Tensor& row, std::size_t times) {
  const std::size_t c = row.cols();
  Tensor out = Tensor::matrix(times, c);
  for (std::size_t i = 0; i < times; ++i) {
    std::copy(row.data().begin(), row.data().begin() + static_cast<std::ptrdiff_t>(c),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

}  // namespace

// ----------------------------------------------------------- CI summaries

PredictionWithCI summarize_samples(std::span<const double> samples, double level) {
  if (samples.size() < kMinMcSamples) {
    throw ConfigError("MC-dropout needs at least " + std::to_string(kMinMcSamples) + " samples (got " +
                      std::to_string(samples.size()) + ")");
  }
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("CI level must be in (0, 1)");
  const double x0 = samples[0];
  double shift = 0.0;
  for (double v : samples) shift += v - x0;
  PredictionWithCI out;
  out.point = x0 + shift / static_cast<double>(samples.size());
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  out.lower = std::min(quantile((1.0 - level) / 2.0), out.point);
  out.upper = std::max(quantile((1.0 + level) / 2.0), out.point);
  out.samples = samples.size();
  out.level = level;
  return out;
}

// --------------------------------------------------------- transitions

TransitionPrediction TransitionPrediction::forced_stable() {
  TransitionPrediction p;
  p.primary[static_cast<std::size_t>(Response::Stable)] = 1.0;
  p.nodal[static_cast<std::size_t>(Response::Stable)] = 1.0;
  return p;
}

TransitionPrediction TransitionPrediction::point_mass(const TransitionState& s) {
  TransitionPrediction p;
  p.primary[static_cast<std::size_t>(s.primary)] = 1.0;
  p.nodal[static_cast<std::size_t>(s.nodal)] = 1.0;
  for (std::size_t i = 0; i < kDltTypes; ++i) p.dlt[i] = s.dlt[i] ? 1.0 : 0.0;
  return p;
}

TransitionSummary TransitionPrediction::expected() const {
  TransitionSummary s;
  s.primary = 0.0;
  s.nodal = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    s.primary += static_cast<double>(k) * primary[k];
    s.nodal += static_cast<double>(k) * nodal[k];
  }
  s.dlt = dlt;
  return s;
}

TransitionState TransitionPrediction::most_likely() const {
  TransitionState s;
  s.primary = static_cast<Response>(std::max_element(primary.begin(), primary.end()) - primary.begin());
  s.nodal = static_cast<Response>(std::max_element(nodal.begin(), nodal.end()) - nodal.begin());
  for (std::size_t i = 0; i < kDltTypes; ++i) s.dlt[i] = dlt[i] >= 0.5;
  return s;
}

TransitionState TransitionPrediction::sample(std::mt19937_64& rng) const {
  auto draw = [&](const std::array<double, 4>& p) {
    double u = uniform01(rng);
    for (std::size_t k = 0; k < 4; ++k) {
      if (u < p[k]) return static_cast<Response>(k);
      u -= p[k];
    }
    return static_cast<Response>(std::max_element(p.begin(), p.end()) - p.begin());
  };
  TransitionState s;
  s.primary = draw(primary);
  s.nodal = draw(nodal);
  for (std::size_t i = 0; i < kDltTypes; ++i) s.dlt[i] = bernoulli(rng, dlt[i]);
  return s;
}

// ---------------------------------------------------------------- trunk

MlpTrunk::MlpTrunk(ParameterSet& params, const std::string& name, std::size_t in, std::vector<std::size_t> hidden,
                   std::mt19937_64& rng) {
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(params, name + ".hidden" + std::to_string(i), width, hidden[i], rng);
    width = hidden[i];
  }
}

MlpTrunk::MlpTrunk(ParameterSet& params, const std::string& name, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) layers_.emplace_back(params, name + ".hidden" + std::to_string(i));
}

Var MlpTrunk::operator()(Graph& g, Var x, const DropoutSpec& dropout) const {
  Var h = ad::dropout(x, dropout.input);
  for (const auto& layer : layers_) h = ad::relu(layer(g, h));
  return ad::dropout(h, dropout.hidden);
}

// ------------------------------------------------------ TransitionModel

std::string TransitionModel::prefix(Stage stage) { return stage == Stage::IC ? "post_ic" : "post_cc"; }

TransitionModel::TransitionModel(Stage stage, const SimulatorConfig& config, std::uint64_t seed)
    : stage_(stage), config_(config) {
  if (stage == Stage::ND) throw ConfigError("no transition model after ND");
  std::mt19937_64 rng(seed);
  const std::size_t h = config.transition_hidden;
  const std::string p = prefix(stage);
  trunk_ = MlpTrunk(params_, p, kEncodedWidth, {h, h}, rng);
  primary_ = Linear(params_, p + ".primary", h + 1, 4, rng);
  nodal_ = Linear(params_, p + ".nodal", h + 1, 4, rng);
  dlt_ = Linear(params_, p + ".dlt", h + 1, kDltTypes, rng);
}

TransitionModel::TransitionModel(Stage stage, const SimulatorConfig& config, ParameterSet params)
    : stage_(stage), config_(config), params_(std::move(params)), trained_(true) {
  bind();
}

TransitionModel::TransitionModel(const TransitionModel& other)
    : stage_(other.stage_), config_(other.config_), params_(other.params_), trained_(other.trained_) {
  if (other.params_.size() > 0) bind();
}

TransitionModel& TransitionModel::operator=(const TransitionModel& other) {
  if (this != &other) {
    TransitionModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void TransitionModel::bind() {
  const std::string p = prefix(stage_);
  trunk_ = MlpTrunk(params_, p, 2);
  primary_ = Linear(params_, p + ".primary");
  nodal_ = Linear(params_, p + ".nodal");
  dlt_ = Linear(params_, p + ".dlt");
}

TransitionModel::Outputs TransitionModel::forward(Graph& g, Var x, Var decision) const {
  Graph::Scope scope(g, prefix(stage_));
  Var h = trunk_(g, x, config_.dropout);
  const Var parts[] = {h, decision};
  Var hd = ad::concat_cols(parts);
  Outputs o;
  o.primary_logits = primary_(g, hd);
  o.nodal_logits = nodal_(g, hd);
  o.dlt_logits = dlt_(g, hd);
  o.primary = ad::softmax(o.primary_logits);
  o.nodal = ad::softmax(o.nodal_logits);
  o.dlt = ad::sigmoid(o.dlt_logits);
  return o;
}

Tensor TransitionModel::stage_inputs(const Cohort& c, const FeatureEncoder& encoder, Stage stage) {
  return encoder.encode_rows(c, stage);
}

std::vector<TransitionPrediction> TransitionModel::predict(const Tensor& x, std::span<const double> decisions) const {
  if (!trained_) throw UsageError("transition model " + prefix(stage_) + " used before training");
  if (decisions.size() != x.rows()) throw ShapeError("predict_transition: one decision per row required");
  Graph g(false);
  Outputs o = forward(g, g.constant(x), g.constant(Tensor({x.rows(), 1}, std::vector<double>(decisions.begin(), decisions.end()))));
  std::vector<TransitionPrediction> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (stage_ == Stage::IC && decisions[i] < 0.5) {
      out[i] = TransitionPrediction::forced_stable();
      continue;
    }
    for (std::size_t k = 0; k < 4; ++k) {
      out[i].primary[k] = o.primary.value()(i, k);
      out[i].nodal[k] = o.nodal.value()(i, k);
    }
    for (std::size_t k = 0; k < kDltTypes; ++k) out[i].dlt[k] = o.dlt.value()(i, k);
  }
  return out;
}

TransitionModel TransitionModel::fit(const Cohort& train, const FeatureEncoder& encoder, Stage stage,
                                     const SimulatorConfig& config, std::uint64_t seed, TrainHistory* history) {
  TransitionModel model(stage, config, derive_seed(seed, 1));
  const Tensor x = stage_inputs(train, encoder, stage);
  const std::size_t n = train.size();
  Tensor decision = Tensor::matrix(n, 1);
  std::vector<std::size_t> primary(n), nodal(n);
  Tensor dlt = Tensor::matrix(n, kDltTypes);
  std::array<std::size_t, 4> primary_counts{}, nodal_counts{};
  for (std::size_t i = 0; i < n; ++i) {
    const TransitionState& t = stage == Stage::IC ? train[i].post_ic : train[i].post_cc;
    decision(i, 0) = train[i].sequence.at(stage) ? 1.0 : 0.0;
    primary[i] = static_cast<std::size_t>(t.primary);
    nodal[i] = static_cast<std::size_t>(t.nodal);
    ++primary_counts[primary[i]];
    ++nodal_counts[nodal[i]];
    for (std::size_t k = 0; k < kDltTypes; ++k) dlt(i, k) = t.dlt[k] ? 1.0 : 0.0;
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (primary_counts[k] == 0) spdlog::warn("{}: primary response class {} has no training examples", prefix(stage), k);
    if (nodal_counts[k] == 0) spdlog::warn("{}: nodal response class {} has no training examples", prefix(stage), k);
  }
  const Tensor primary_t = one_hot(primary, 4);
  const Tensor nodal_t = one_hot(nodal, 4);

  auto loss = [&](Graph& g, std::span<const std::size_t> rows) {
    Outputs o = model.forward(g, g.constant(take_rows(x, rows)), g.constant(take_rows(decision, rows)));
    Var l = ad::add(cross_entropy(o.primary_logits, g.constant(take_rows(primary_t, rows))),
                    cross_entropy(o.nodal_logits, g.constant(take_rows(nodal_t, rows))));
    return ad::add(l, bce_with_logits(o.dlt_logits, g.constant(take_rows(dlt, rows))));
  };
  TrainHistory h = fit_early_stopping(model.params_, n, config.train, derive_seed(seed, 2), loss);
  spdlog::info("{} transition model: {} epochs, best validation loss {:.4f}", prefix(stage), h.val_loss.size(),
               h.val_loss[h.best_epoch]);
  if (history) *history = std::move(h);
  model.trained_ = true;
  return model;
}

// --------------------------------------------------- StaticOutcomeModel

StaticOutcomeModel::StaticOutcomeModel(const SimulatorConfig& config, std::uint64_t seed) : config_(config) {
  std::mt19937_64 rng(seed);
  const std::size_t h = config.transition_hidden;
  trunk_ = MlpTrunk(params_, "static", kEncodedWidth, {h, h}, rng);
  head_ = Linear(params_, "static.head", h + kStages, 2, rng);
}

StaticOutcomeModel::StaticOutcomeModel(const SimulatorConfig& config, ParameterSet params)
    : config_(config), params_(std::move(params)), trained_(true) {
  bind();
}

StaticOutcomeModel::StaticOutcomeModel(const StaticOutcomeModel& other)
    : config_(other.config_), params_(other.params_), trained_(other.trained_) {
  if (other.params_.size() > 0) bind();
}

StaticOutcomeModel& StaticOutcomeModel::operator=(const StaticOutcomeModel& other) {
  if (this != &other) {
    StaticOutcomeModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void StaticOutcomeModel::bind() {
  trunk_ = MlpTrunk(params_, "static", 2);
  head_ = Linear(params_, "static.head");
}

Var StaticOutcomeModel::forward(Graph& g, Var x, Var decisions) const {
  Graph::Scope scope(g, "static");
  Var h = trunk_(g, x, config_.dropout);
  const Var parts[] = {h, decisions};
  return head_(g, ad::concat_cols(parts));
}

Tensor StaticOutcomeModel::predict(const Tensor& x, const Tensor& decisions) const {
  if (!trained_) throw UsageError("static outcome model used before training");
  Graph g(false);
  return ad::sigmoid(forward(g, g.constant(x), g.constant(decisions))).value();
}

Tensor StaticOutcomeModel::sample(const Tensor& x_row, const Tensor& decision_row, std::size_t samples,
                                  std::uint64_t seed) const {
  if (!trained_) throw UsageError("static outcome model used before training");
  Graph g(true, seed);
  return ad::sigmoid(forward(g, g.constant(replicate_row(x_row, samples)), g.constant(replicate_row(decision_row, samples))))
      .value();
}

StaticOutcomeModel StaticOutcomeModel::fit(const Cohort& train, const FeatureEncoder& encoder,
                                           const SimulatorConfig& config, std::uint64_t seed, TrainHistory* history) {
  StaticOutcomeModel model(config, derive_seed(seed, 1));
  const Tensor x = encoder.encode_rows_full(train);
  const Tensor d = decision_matrix(train);
  Tensor y = Tensor::matrix(train.size(), 2);
  for (std::size_t i = 0; i < train.size(); ++i) {
    y(i, 0) = train[i].outcome.feeding_tube ? 1.0 : 0.0;
    y(i, 1) = train[i].outcome.aspiration_post ? 1.0 : 0.0;
  }
  auto loss = [&](Graph& g, std::span<const std::size_t> rows) {
    Var z = model.forward(g, g.constant(take_rows(x, rows)), g.constant(take_rows(d, rows)));
    return bce_with_logits(z, g.constant(take_rows(y, rows)));
  };
  TrainHistory h = fit_early_stopping(model.params_, train.size(), config.train, derive_seed(seed, 2), loss);
  spdlog::info("static outcome model: {} epochs, best validation loss {:.4f}", h.val_loss.size(),
               h.val_loss[h.best_epoch]);
  if (history) *history = std::move(h);
  model.trained_ = true;
  return model;
}

PredictionWithCI predict_with_ci(const StaticOutcomeModel& model, const Tensor& x_row, const Tensor& decision_row,
                                 std::size_t head, std::size_t samples, double level, std::uint64_t seed) {
  if (samples < kMinMcSamples) {
    throw ConfigError("MC-dropout needs at least " + std::to_string(kMinMcSamples) + " samples");
  }
  const Tensor draws = model.sample(x_row, decision_row, samples, seed);
  std::vector<double> col(samples);
  for (std::size_t i = 0; i < samples; ++i) col[i] = draws(i, head);
  return summarize_samples(col, level);
}

// --------------------------------------------------------- SurvivalModel

SurvivalModel::SurvivalModel(const SimulatorConfig& config, std::uint64_t seed) : config_(config) {
  std::mt19937_64 rng(seed);
  const std::size_t h = config.survival_hidden;
  const std::size_t k = config.mixture_components;
  if (k == 0) throw ConfigError("mixture needs at least one component");
  trunk_ = MlpTrunk(params_, "survival", kEncodedWidth, {h}, rng);
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    for (std::size_t part = 0; part < 3; ++part) {
      heads_[e][part] = Linear(params_, "survival." + kEndpointKeys[e] + "." + kMixtureParts[part], h + kStages, k, rng);
    }
  }
}

SurvivalModel::SurvivalModel(const SimulatorConfig& config, ParameterSet params)
    : config_(config), params_(std::move(params)), trained_(true) {
  bind();
}

SurvivalModel::SurvivalModel(const SurvivalModel& other)
    : config_(other.config_), params_(other.params_), trained_(other.trained_) {
  if (other.params_.size() > 0) bind();
}

SurvivalModel& SurvivalModel::operator=(const SurvivalModel& other) {
  if (this != &other) {
    SurvivalModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void SurvivalModel::bind() {
  trunk_ = MlpTrunk(params_, "survival", 1);
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    for (std::size_t part = 0; part < 3; ++part) {
      heads_[e][part] = Linear(params_, "survival." + kEndpointKeys[e] + "." + kMixtureParts[part]);
    }
  }
}

SurvivalModel::Outputs SurvivalModel::forward(Graph& g, Var x, Var decisions) const {
  Graph::Scope scope(g, "survival");
  Var h = trunk_(g, x, config_.dropout);
  const Var parts[] = {h, decisions};
  Var hd = ad::concat_cols(parts);
  Outputs out;
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    out[e].log_weights = ad::log_softmax(heads_[e][0](g, hd));
    out[e].mu = heads_[e][1](g, hd);
    out[e].sigma = ad::add_scalar(ad::softplus(heads_[e][2](g, hd)), kSigmaFloor);
  }
  return out;
}

Var SurvivalModel::negative_log_likelihood(Graph& g, const Outputs& out, const Tensor& times, const Tensor& events) {
  const std::size_t n = times.rows();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var total;
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    Tensor lt = Tensor::matrix(n, 1), ev = Tensor::matrix(n, 1), cens = Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      lt(i, 0) = std::log(times(i, e));
      ev(i, 0) = events(i, e);
      cens(i, 0) = 1.0 - events(i, e);
    }
    Var log_t = g.constant(lt);
    const auto& o = out[e];
    Var z = ad::div(ad::sub(log_t, o.mu), o.sigma);
    Var log_f = ad::sub(ad::logsumexp(ad::sub(ad::sub(o.log_weights, ad::scale(ad::square(z), 0.5)), ad::log(o.sigma))),
                        ad::add_scalar(log_t, half_log_2pi));
    Var log_s = ad::logsumexp(ad::add(o.log_weights, ad::normal_log_sf(z)));
    Var ll = ad::add(ad::mul(g.constant(ev), log_f), ad::mul(g.constant(cens), log_s));
    Var nll = ad::scale(ad::sum(ll), -1.0 / static_cast<double>(n));
    total = total.valid() ? ad::add(total, nll) : nll;
  }
  return total;
}

std::array<LogNormalMixture, kEndpoints> SurvivalModel::mixtures_at(const Outputs& out, std::size_t row) {
  std::array<LogNormalMixture, kEndpoints> m;
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    const std::size_t k = out[e].mu.cols();
    m[e].weights.resize(k);
    m[e].mu.resize(k);
    m[e].sigma.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      m[e].weights[j] = std::exp(out[e].log_weights.value()(row, j));
      m[e].mu[j] = out[e].mu.value()(row, j);
      m[e].sigma[j] = out[e].sigma.value()(row, j);
    }
  }
  return m;
}

std::vector<std::array<LogNormalMixture, kEndpoints>> SurvivalModel::predict(const Tensor& x,
                                                                            const Tensor& decisions) const {
  if (!trained_) throw UsageError("survival model used before training");
  Graph g(false);
  Outputs out = forward(g, g.constant(x), g.constant(decisions));
  std::vector<std::array<LogNormalMixture, kEndpoints>> result(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) result[i] = mixtures_at(out, i);
  return result;
}

SurvivalModel SurvivalModel::fit(const Cohort& train, const FeatureEncoder& encoder, const SimulatorConfig& config,
                                 std::uint64_t seed, TrainHistory* history) {
  const Tensor times = outcome_times(train);
  const Tensor events = outcome_events(train);
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    bool any = false;
    for (std::size_t i = 0; i < train.size(); ++i) any = any || events(i, e) > 0.5;
    if (!any) {
      throw ConfigError("survival endpoint " + std::string(endpoint_name(static_cast<Endpoint>(e))) +
                        " has no events (all records censored)");
    }
  }
  SurvivalModel model(config, derive_seed(seed, 1));
  // Start every component near the observed time scale.
  const std::size_t k = config.mixture_components;
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    std::vector<double> lt;
    for (std::size_t i = 0; i < train.size(); ++i) lt.push_back(std::log(times(i, e)));
    std::nth_element(lt.begin(), lt.begin() + static_cast<std::ptrdiff_t>(lt.size() / 2), lt.end());
    const double center = lt[lt.size() / 2];
    auto& mu_bias = model.params_.get("survival." + kEndpointKeys[e] + ".mu.bias").value;
    auto& sigma_bias = model.params_.get("survival." + kEndpointKeys[e] + ".sigma.bias").value;
    for (std::size_t j = 0; j < k; ++j) {
      mu_bias[j] = center + 0.25 * (static_cast<double>(j) - 0.5 * static_cast<double>(k - 1));
      sigma_bias[j] = softplus_inverse(1.0);
    }
  }
  const Tensor x = encoder.encode_rows_full(train);
  const Tensor d = decision_matrix(train);
  auto loss = [&](Graph& g, std::span<const std::size_t> rows) {
    Outputs out = model.forward(g, g.constant(take_rows(x, rows)), g.constant(take_rows(d, rows)));
    return negative_log_likelihood(g, out, take_rows(times, rows), take_rows(events, rows));
  };
  TrainHistory h = fit_early_stopping(model.params_, train.size(), config.train, derive_seed(seed, 2), loss);
  spdlog::info("survival model: {} epochs, best validation NLL {:.4f}", h.val_loss.size(), h.val_loss[h.best_epoch]);
  if (history) *history = std::move(h);
  model.trained_ = true;
  return model;
}

Tensor decision_matrix(const Cohort& c) {
  Tensor t = Tensor::matrix(c.size(), kStages);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t s = 0; s < kStages; ++s) t(i, s) = c[i].sequence.decisions[s] ? 1.0 : 0.0;
  }
  return t;
}

Tensor outcome_times(const Cohort& c) {
  Tensor t = Tensor::matrix(c.size(), kEndpoints);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t e = 0; e < kEndpoints; ++e) t(i, e) = c[i].outcome.endpoints[e].months;
  }
  return t;
}

Tensor outcome_events(const Cohort& c) {
  Tensor t = Tensor::matrix(c.size(), kEndpoints);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t e = 0; e < kEndpoints; ++e) t(i, e) = c[i].outcome.endpoints[e].event ? 1.0 : 0.0;
  }
  return t;
}

// ------------------------------------------------------------ Simulator

StageContext outcome_context(const TreatmentSequence& s, const TransitionSummary& post_ic,
                             const TransitionSummary& post_cc) {
  StageContext ctx;
  for (std::size_t i = 0; i < kStages; ++i) ctx.decisions[i] = s.decisions[i];
  ctx.post_ic = post_ic;
  ctx.post_cc = post_cc;
  return ctx;
}

Trajectory PatientSimulator::rollout(const PatientFeatures& p, const TreatmentSequence& s) const {
  return rollout_batch(std::span(&p, 1), std::span(&s, 1)).at(0);
}

Simulator::Simulator(FeatureEncoder encoder, SimulatorConfig config, TransitionModel post_ic, TransitionModel post_cc,
                     StaticOutcomeModel static_model, SurvivalModel survival)
    : encoder_(encoder),
      config_(config),
      post_ic_(std::move(post_ic)),
      post_cc_(std::move(post_cc)),
      static_(std::move(static_model)),
      survival_(std::move(survival)) {}

Simulator Simulator::fit(const Cohort& train, const FeatureEncoder& encoder, const SimulatorConfig& config,
                         std::uint64_t seed) {
  auto ic = TransitionModel::fit(train, encoder, Stage::IC, config, derive_seed(seed, 11));
  auto cc = TransitionModel::fit(train, encoder, Stage::CC, config, derive_seed(seed, 12));
  auto st = StaticOutcomeModel::fit(train, encoder, config, derive_seed(seed, 13));
  auto sv = SurvivalModel::fit(train, encoder, config, derive_seed(seed, 14));
  return Simulator(encoder, config, std::move(ic), std::move(cc), std::move(st), std::move(sv));
}

bool Simulator::trained() const {
  return encoder_.fitted() && post_ic_.trained() && post_cc_.trained() && static_.trained() && survival_.trained();
}

void Simulator::require_trained() const {
  if (!trained()) throw UsageError("simulator used before all component models were trained");
}

TransitionPrediction Simulator::predict_transition(const PatientFeatures& p, const StageContext& ctx, Stage stage,
                                                   bool decision) const {
  require_trained();
  const TransitionModel& m = stage == Stage::IC ? post_ic_ : post_cc_;
  if (stage == Stage::ND) throw UsageError("no transition model after ND");
  Tensor x = Tensor::matrix(1, kEncodedWidth);
  encoder_.encode_into(p, ctx, x.data());
  const double d = decision ? 1.0 : 0.0;
  return m.predict(x, std::span(&d, 1)).at(0);
}

std::vector<Trajectory> Simulator::rollout_batch(std::span<const PatientFeatures> patients,
                                                 std::span<const TreatmentSequence> sequences) const {
  require_trained();
  if (patients.size() != sequences.size()) throw ShapeError("rollout_batch: one sequence per patient required");
  const std::size_t m = patients.size();
  std::vector<Trajectory> out(m);
  if (m == 0) return out;

  Tensor x = Tensor::matrix(m, kEncodedWidth);
  std::vector<double> d(m);
  for (std::size_t i = 0; i < m; ++i) {
    out[i].sequence = sequences[i];
    encoder_.encode_into(patients[i], StageContext{}, x.data().subspan(i * kEncodedWidth, kEncodedWidth));
    d[i] = sequences[i].ic() ? 1.0 : 0.0;
  }
  const auto ic = post_ic_.predict(x, d);
  for (std::size_t i = 0; i < m; ++i) {
    out[i].post_ic = ic[i];
    out[i].post_ic_fed = ic[i].expected();
    StageContext ctx;
    ctx.decisions[0] = sequences[i].ic();
    ctx.post_ic = out[i].post_ic_fed;
    encoder_.encode_into(patients[i], ctx, x.data().subspan(i * kEncodedWidth, kEncodedWidth));
    d[i] = sequences[i].cc() ? 1.0 : 0.0;
  }
  const auto cc = post_cc_.predict(x, d);
  Tensor dec = Tensor::matrix(m, kStages);
  for (std::size_t i = 0; i < m; ++i) {
    out[i].post_cc = cc[i];
    out[i].post_cc_fed = cc[i].expected();
    encoder_.encode_into(patients[i], outcome_context(sequences[i], out[i].post_ic_fed, out[i].post_cc_fed),
                         x.data().subspan(i * kEncodedWidth, kEncodedWidth));
    for (std::size_t s = 0; s < kStages; ++s) dec(i, s) = sequences[i].decisions[s] ? 1.0 : 0.0;
  }
  const Tensor risks = static_.predict(x, dec);
  const auto mixtures = survival_.predict(x, dec);
  for (std::size_t i = 0; i < m; ++i) {
    out[i].p_feeding_tube = risks(i, 0);
    out[i].p_aspiration = risks(i, 1);
    out[i].mixtures = mixtures[i];
    for (std::size_t e = 0; e < kEndpoints; ++e) {
      out[i].survival[e] = serving_curve(mixtures[i][e]);
      out[i].median_months[e] = mixtures[i][e].median();
    }
  }
  return out;
}

Trajectory Simulator::rollout_mode(const PatientFeatures& p, const TreatmentSequence& s, RolloutMode mode,
                                   std::mt19937_64* rng) const {
  if (mode == RolloutMode::Expected) return rollout(p, s);
  if (!rng) throw UsageError("sampled rollout needs a random generator");
  require_trained();
  Trajectory t;
  t.sequence = s;
  t.post_ic = predict_transition(p, StageContext{}, Stage::IC, s.ic());
  t.post_ic_fed = TransitionSummary::from_state(t.post_ic.sample(*rng));
  StageContext ctx;
  ctx.decisions[0] = s.ic();
  ctx.post_ic = t.post_ic_fed;
  t.post_cc = predict_transition(p, ctx, Stage::CC, s.cc());
  t.post_cc_fed = TransitionSummary::from_state(t.post_cc.sample(*rng));
  Tensor x = Tensor::matrix(1, kEncodedWidth);
  encoder_.encode_into(p, outcome_context(s, t.post_ic_fed, t.post_cc_fed), x.data());
  Tensor dec = Tensor::matrix(1, kStages);
  for (std::size_t i = 0; i < kStages; ++i) dec(0, i) = s.decisions[i] ? 1.0 : 0.0;
  const Tensor risks = static_.predict(x, dec);
  t.p_feeding_tube = risks(0, 0);
  t.p_aspiration = risks(0, 1);
  t.mixtures = survival_.predict(x, dec).at(0);
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    t.survival[e] = serving_curve(t.mixtures[e]);
    t.median_months[e] = t.mixtures[e].median();
  }
  return t;
}

Trajectory Simulator::rollout_known(const PatientFeatures& p, const TreatmentSequence& s,
                                    const std::optional<TransitionState>& post_ic,
                                    const std::optional<TransitionState>& post_cc) const {
  if (!post_ic && !post_cc) return rollout(p, s);
  require_trained();
  Trajectory t;
  t.sequence = s;
  t.post_ic = post_ic ? TransitionPrediction::point_mass(*post_ic) : predict_transition(p, StageContext{}, Stage::IC, s.ic());
  t.post_ic_fed = t.post_ic.expected();
  StageContext ctx;
  ctx.decisions[0] = s.ic();
  ctx.post_ic = t.post_ic_fed;
  t.post_cc = post_cc ? TransitionPrediction::point_mass(*post_cc) : predict_transition(p, ctx, Stage::CC, s.cc());
  t.post_cc_fed = t.post_cc.expected();
  Tensor x = Tensor::matrix(1, kEncodedWidth);
  encoder_.encode_into(p, outcome_context(s, t.post_ic_fed, t.post_cc_fed), x.data());
  Tensor dec = Tensor::matrix(1, kStages);
  for (std::size_t i = 0; i < kStages; ++i) dec(0, i) = s.decisions[i] ? 1.0 : 0.0;
  const Tensor risks = static_.predict(x, dec);
  t.p_feeding_tube = risks(0, 0);
  t.p_aspiration = risks(0, 1);
  t.mixtures = survival_.predict(x, dec).at(0);
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    t.survival[e] = serving_curve(t.mixtures[e]);
    t.median_months[e] = t.mixtures[e].median();
  }
  return t;
}

OutcomeCI Simulator::outcome_ci(const PatientFeatures& p, const Trajectory& t, std::size_t samples, double level,
                                std::uint64_t seed) const {
  require_trained();
  if (samples < kMinMcSamples) {
    throw ConfigError("MC-dropout needs at least " + std::to_string(kMinMcSamples) + " samples");
  }
  Tensor x = Tensor::matrix(1, kEncodedWidth);
  encoder_.encode_into(p, outcome_context(t.sequence, t.post_ic_fed, t.post_cc_fed), x.data());
  Tensor dec = Tensor::matrix(1, kStages);
  for (std::size_t i = 0; i < kStages; ++i) dec(0, i) = t.sequence.decisions[i] ? 1.0 : 0.0;
  const Tensor xs = replicate_row(x, samples);
  const Tensor ds = replicate_row(dec, samples);

  Graph g(true, seed);
  const Tensor risks = ad::sigmoid(static_.forward(g, g.constant(xs), g.constant(ds))).value();
  const auto out = survival_.forward(g, g.constant(xs), g.constant(ds));

  OutcomeCI ci;
  std::vector<double> col(samples);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < samples; ++i) col[i] = risks(i, j);
    (j == 0 ? ci.feeding_tube : ci.aspiration) = summarize_samples(col, level);
  }
  const std::size_t grid = serving_time_grid().size();
  std::array<std::vector<std::vector<double>>, kEndpoints> curves;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto mix = SurvivalModel::mixtures_at(out, i);
    for (std::size_t e = 0; e < kEndpoints; ++e) curves[e].push_back(serving_curve(mix[e]));
  }
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    ci.survival[e].resize(grid);
    for (std::size_t k = 0; k < grid; ++k) {
      for (std::size_t i = 0; i < samples; ++i) col[i] = curves[e][i][k];
      ci.survival[e][k] = summarize_samples(col, level);
    }
  }
  return ci;
}

}  // namespace dtwin
