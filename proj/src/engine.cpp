#include "dtwin/engine.hpp"

#include <set>

#include <spdlog/spdlog.h>

#include "dtwin/api.hpp"
#include "dtwin/explain.hpp"
#include "dtwin/random.hpp"
#include "dtwin/synthetic.hpp"

namespace dtwin {

using nlohmann::json;

namespace {

// Reads known keys of a config object and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config " + path_ + " must be an object");
  }
  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config " + path_ + key + " has the wrong type");
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string path(const char* key) const { return path_ + key + "."; }
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + path_ + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json train_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"validation_fraction", c.validation_fraction},
          {"adam",
           {{"learning_rate", c.adam.learning_rate},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon}}}};
}

void read_train(const json& j, const std::string& path, TrainConfig& c) {
  Fields f(j, path);
  f.read("max_epochs", c.max_epochs);
  f.read("patience", c.patience);
  f.read("batch_size", c.batch_size);
  f.read("validation_fraction", c.validation_fraction);
  if (const json* a = f.sub("adam")) {
    Fields fa(*a, f.path("adam"));
    fa.read("learning_rate", c.adam.learning_rate);
    fa.read("beta1", c.adam.beta1);
    fa.read("beta2", c.adam.beta2);
    fa.read("epsilon", c.adam.epsilon);
    fa.finish();
  }
  f.finish();
}

const char* orientation_name(AttentionOrientation o) {
  return o == AttentionOrientation::Paper ? "paper" : "standard";
}

std::string stage_key(Stage s) {
  std::string k(stage_name(s));
  for (char& c : k) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return k;
}

const char* kPostIc = "params.post_ic.";
const char* kPostCc = "params.post_cc.";
const char* kStatic = "params.static.";
const char* kSurvival = "params.survival.";
const char* kPolicy = "params.policy.";
const char* kSymptomParams = "params.symptoms.";

std::string embedding_key(Strategy s, Stage st) {
  return std::string("cohort.embedding.") + strategy_name(s) + "." + stage_key(st);
}
std::string propensity_key(Stage st) { return "cohort.propensity." + stage_key(st); }
std::string memory_key(Stage st) { return "policy.memory." + stage_key(st); }

Tensor from_vector(const std::vector<double>& v) { return Tensor::row(v); }

}  // namespace

// ------------------------------------------------------------- config

void PipelineConfig::validate() const {
  if (cohort_size < kMinSyntheticCohortSize) {
    throw ConfigError("cohort_size must be at least " + std::to_string(kMinSyntheticCohortSize));
  }
  if (symptom_cohort_size < 2) throw ConfigError("symptom_cohort_size must be at least 2");
  if (mc_samples < kMinMcSamples) throw ConfigError("mc_samples must be at least " + std::to_string(kMinMcSamples));
  if (ig_steps < kMinIgSteps) throw ConfigError("ig_steps must be at least " + std::to_string(kMinIgSteps));
  if (policy.heads == 0 || policy.width % policy.heads != 0) {
    throw ConfigError("policy width must be divisible by the head count");
  }
  objective.validate();
  neighbors.validate();
}

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["cohort_size"] = cohort_size;
  j["symptom_cohort_size"] = symptom_cohort_size;
  j["mc_samples"] = mc_samples;
  j["ig_steps"] = ig_steps;
  j["simulator"] = {{"transition_hidden", simulator.transition_hidden},
                    {"survival_hidden", simulator.survival_hidden},
                    {"mixture_components", simulator.mixture_components},
                    {"dropout", {{"input", simulator.dropout.input}, {"hidden", simulator.dropout.hidden}}},
                    {"train", train_json(simulator.train)}};
  j["policy"] = {{"width", policy.width},
                 {"heads", policy.heads},
                 {"ffn_width", policy.ffn_width},
                 {"head_hidden", policy.head_hidden},
                 {"input_dropout", policy.input_dropout},
                 {"head_dropout", policy.head_dropout},
                 {"orientation", orientation_name(policy.orientation)},
                 {"triplet", {{"w1", policy.triplet.w1}, {"w2", policy.triplet.w2}, {"margin", policy.triplet.margin}}},
                 {"shuffle_probability", policy.shuffle_probability},
                 {"freeze_encoder", policy.freeze_encoder},
                 {"train", train_json(policy.train)}};
  j["objective"] = {{"w_tox", objective.w_tox}, {"w_s", objective.w_s}, {"w_z", objective.w_z}, {"w_o", objective.w_o}};
  j["symptoms"] = {{"hidden", symptoms.hidden}, {"train", train_json(symptoms.train)}};
  j["neighbors"] = {{"k", neighbors.k},
                    {"n", neighbors.n},
                    {"alpha", neighbors.alpha},
                    {"alpha_step", neighbors.alpha_step},
                    {"min_group", neighbors.min_group}};
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  Fields f(j, "");
  f.read("seed", c.seed);
  f.read("cohort_size", c.cohort_size);
  f.read("symptom_cohort_size", c.symptom_cohort_size);
  f.read("mc_samples", c.mc_samples);
  f.read("ig_steps", c.ig_steps);
  if (const json* s = f.sub("simulator")) {
    Fields fs(*s, "simulator.");
    fs.read("transition_hidden", c.simulator.transition_hidden);
    fs.read("survival_hidden", c.simulator.survival_hidden);
    fs.read("mixture_components", c.simulator.mixture_components);
    if (const json* d = fs.sub("dropout")) {
      Fields fd(*d, "simulator.dropout.");
      fd.read("input", c.simulator.dropout.input);
      fd.read("hidden", c.simulator.dropout.hidden);
      fd.finish();
    }
    if (const json* t = fs.sub("train")) read_train(*t, "simulator.train.", c.simulator.train);
    fs.finish();
  }
  if (const json* p = f.sub("policy")) {
    Fields fp(*p, "policy.");
    fp.read("width", c.policy.width);
    fp.read("heads", c.policy.heads);
    fp.read("ffn_width", c.policy.ffn_width);
    fp.read("head_hidden", c.policy.head_hidden);
    fp.read("input_dropout", c.policy.input_dropout);
    fp.read("head_dropout", c.policy.head_dropout);
    std::string orientation = orientation_name(c.policy.orientation);
    fp.read("orientation", orientation);
    c.policy.orientation = parse_attention_orientation(orientation);
    if (const json* t = fp.sub("triplet")) {
      Fields ft(*t, "policy.triplet.");
      ft.read("w1", c.policy.triplet.w1);
      ft.read("w2", c.policy.triplet.w2);
      ft.read("margin", c.policy.triplet.margin);
      ft.finish();
    }
    fp.read("shuffle_probability", c.policy.shuffle_probability);
    fp.read("freeze_encoder", c.policy.freeze_encoder);
    if (const json* t = fp.sub("train")) read_train(*t, "policy.train.", c.policy.train);
    fp.finish();
  }
  if (const json* o = f.sub("objective")) {
    Fields fo(*o, "objective.");
    fo.read("w_tox", c.objective.w_tox);
    fo.read("w_s", c.objective.w_s);
    fo.read("w_z", c.objective.w_z);
    fo.read("w_o", c.objective.w_o);
    fo.finish();
  }
  if (const json* s = f.sub("symptoms")) {
    Fields fs(*s, "symptoms.");
    fs.read("hidden", c.symptoms.hidden);
    if (const json* t = fs.sub("train")) read_train(*t, "symptoms.train.", c.symptoms.train);
    fs.finish();
  }
  if (const json* n = f.sub("neighbors")) {
    Fields fn(*n, "neighbors.");
    fn.read("k", c.neighbors.k);
    fn.read("n", c.neighbors.n);
    fn.read("alpha", c.neighbors.alpha);
    fn.read("alpha_step", c.neighbors.alpha_step);
    fn.read("min_group", c.neighbors.min_group);
    fn.finish();
  }
  f.finish();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::small() {
  PipelineConfig c;
  c.simulator.transition_hidden = 32;
  c.simulator.survival_hidden = 16;
  c.simulator.train.max_epochs = 15;
  c.policy.width = 32;
  c.policy.ffn_width = 32;
  c.policy.train.max_epochs = 15;
  c.symptoms.train.max_epochs = 15;
  c.mc_samples = 30;
  c.ig_steps = 64;
  return c;
}

// ------------------------------------------------------------- engine

std::shared_ptr<const TwinEngine> TwinEngine::train(const PipelineConfig& config, Cohort cohort) {
  config.validate();
  auto e = std::make_shared<TwinEngine>();
  e->config_ = config;
  const std::uint64_t seed = config.seed;
  if (cohort.empty()) {
    spdlog::info("generating synthetic cohort of {} patients (seed {})", config.cohort_size, seed);
    cohort = generate_synthetic_cohort(derive_seed(seed, 1), config.cohort_size);
  }
  CohortSplit split = stratified_split(cohort, derive_seed(seed, 2));
  e->train_ = std::move(split.train);
  e->eval_ = std::move(split.eval);
  spdlog::info("split: {} train, {} eval", e->train_.size(), e->eval_.size());

  e->encoder_ = FeatureEncoder::fit(e->train_);
  e->simulator_ = Simulator::fit(e->train_, e->encoder_, config.simulator, derive_seed(seed, 3));
  spdlog::info("simulator trained");
  e->policy_ = fit_policy(e->train_, e->simulator_, config.policy, config.objective, derive_seed(seed, 4));
  const SymptomCohort symptom_cohort = generate_symptom_cohort(derive_seed(seed, 5), config.symptom_cohort_size);
  e->symptoms_ = SymptomModel::fit(symptom_cohort, derive_seed(seed, 6), config.symptoms);
  spdlog::info("symptom model trained on {} patients", symptom_cohort.size());
  e->baseline_ = baseline_patient(e->train_);
  e->derive_cohort_views();
  e->compute_embeddings();
  e->digest_ = e->to_bundle().digest;
  return e;
}

void TwinEngine::derive_cohort_views() {
  const std::size_t n = train_.size();
  for (std::size_t s = 0; s < kStages; ++s) {
    treated_[s].resize(n);
    for (std::size_t i = 0; i < n; ++i) treated_[s][i] = train_[i].sequence.decisions[s] ? 1 : 0;
  }
  ate_outcomes_ = Tensor::matrix(n, kAteOutcomes);
  for (std::size_t i = 0; i < n; ++i) {
    ate_outcomes_(i, 0) = train_[i].outcome.feeding_tube ? 1.0 : 0.0;
    ate_outcomes_(i, 1) = train_[i].outcome.aspiration_post ? 1.0 : 0.0;
  }
}

void TwinEngine::compute_embeddings() {
  const std::size_t n = train_.size();
  for (std::size_t s = 0; s < kStages; ++s) {
    const Stage st = static_cast<Stage>(s);
    const Tensor x = encoder_.encode_rows(train_, st);
    const std::vector<Stage> stages(n, st);
    for (Strategy strategy : {Strategy::Imitation, Strategy::Optimal}) {
      const auto out = policy_.predict_rows(x, stages, strategy);
      Tensor emb = Tensor::matrix(n, out.at(0).embedding.size());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < emb.cols(); ++j) emb(i, j) = out[i].embedding[j];
      }
      if (strategy == Strategy::Imitation) {
        propensities_[s].resize(n);
        for (std::size_t i = 0; i < n; ++i) propensities_[s][i] = clamp_propensity(out[i].probability);
      }
      embeddings_[idx(strategy)][s] = std::move(emb);
    }
  }
  for (std::size_t k = 0; k < kStrategies; ++k) {
    for (std::size_t s = 0; s < kStages; ++s) novelty_[k][s] = MahalanobisModel::fit(embeddings_[k][s]);
  }
}

ModelBundle TwinEngine::to_bundle() const {
  ModelBundle b;
  b.add_parameters(kPostIc, simulator_.post_ic().params());
  b.add_parameters(kPostCc, simulator_.post_cc().params());
  b.add_parameters(kStatic, simulator_.static_model().params());
  b.add_parameters(kSurvival, simulator_.survival().params());
  b.add_parameters(kPolicy, policy_.params());
  b.add_parameters(kSymptomParams, symptoms_.params());
  const auto& stats = encoder_.stats();
  b.add("encoder.mean", Tensor::row({stats.mean.begin(), stats.mean.end()}));
  b.add("encoder.sd", Tensor::row({stats.sd.begin(), stats.sd.end()}));
  const auto& se = symptoms_.encoder();
  b.add("symptoms.encoder.mean", Tensor::row({se.mean().begin(), se.mean().end()}));
  b.add("symptoms.encoder.sd", Tensor::row({se.sd().begin(), se.sd().end()}));
  for (std::size_t s = 0; s < kStages; ++s) {
    const Stage st = static_cast<Stage>(s);
    b.add(memory_key(st), policy_.memory(st));
    b.add(propensity_key(st), from_vector(propensities_[s]));
    for (Strategy strategy : {Strategy::Imitation, Strategy::Optimal}) {
      b.add(embedding_key(strategy, st), embeddings(strategy, st));
    }
  }
  b.metadata["producer"] = "dtwin";
  b.metadata["config"] = config_.to_json();
  b.metadata["baseline_patient"] = patient_to_json(baseline_);
  b.metadata["train_cohort_csv"] = format_cohort_csv(train_);
  b.metadata["eval_cohort_csv"] = format_cohort_csv(eval_);
  b.metadata["symptom_cohort_csv"] = format_symptom_csv(symptoms_.cohort());
  serialize_bundle(b);
  return b;
}

std::shared_ptr<const TwinEngine> TwinEngine::from_bundle(const ModelBundle& b) {
  auto e = std::make_shared<TwinEngine>();
  const json& meta = b.metadata;
  try {
    e->config_ = PipelineConfig::from_json(meta.at("config"));
    e->train_ = parse_cohort_csv(meta.at("train_cohort_csv").get<std::string>());
    e->eval_ = parse_cohort_csv(meta.at("eval_cohort_csv").get<std::string>());
    e->baseline_ = patient_from_json(meta.at("baseline_patient"));
  } catch (const json::exception& ex) {
    throw BundleError(std::string("bundle metadata is incomplete: ") + ex.what());
  }
  const auto& cfg = e->config_;

  NormalizationStats stats;
  const auto mean = b.at("encoder.mean").data;
  const auto sd = b.at("encoder.sd").data;
  if (mean.size() != stats.mean.size() || sd.size() != stats.sd.size()) throw BundleError("encoder statistics malformed");
  std::copy(mean.begin(), mean.end(), stats.mean.begin());
  std::copy(sd.begin(), sd.end(), stats.sd.begin());
  e->encoder_ = FeatureEncoder(stats);

  e->simulator_ = Simulator(e->encoder_, cfg.simulator, TransitionModel(Stage::IC, cfg.simulator, b.parameters(kPostIc)),
                            TransitionModel(Stage::CC, cfg.simulator, b.parameters(kPostCc)),
                            StaticOutcomeModel(cfg.simulator, b.parameters(kStatic)),
                            SurvivalModel(cfg.simulator, b.parameters(kSurvival)));
  std::array<Tensor, kStages> memory;
  for (std::size_t s = 0; s < kStages; ++s) memory[s] = b.tensor(memory_key(static_cast<Stage>(s)));
  e->policy_ = PolicyModel(cfg.policy, e->encoder_, std::move(memory), b.parameters(kPolicy));

  std::array<double, 3> smean{}, ssd{};
  const auto sm = b.at("symptoms.encoder.mean").data;
  const auto ss = b.at("symptoms.encoder.sd").data;
  if (sm.size() != 3 || ss.size() != 3) throw BundleError("symptom encoder statistics malformed");
  std::copy(sm.begin(), sm.end(), smean.begin());
  std::copy(ss.begin(), ss.end(), ssd.begin());
  SymptomCohort symptom_cohort;
  try {
    symptom_cohort = parse_symptom_csv(meta.at("symptom_cohort_csv").get<std::string>());
  } catch (const json::exception& ex) {
    throw BundleError(std::string("bundle metadata is incomplete: ") + ex.what());
  }
  e->symptoms_ = SymptomModel(SymptomEncoder(smean, ssd), b.parameters(kSymptomParams), std::move(symptom_cohort));

  e->derive_cohort_views();
  const std::size_t n = e->train_.size();
  for (std::size_t s = 0; s < kStages; ++s) {
    const Stage st = static_cast<Stage>(s);
    const auto p = b.at(propensity_key(st)).data;
    if (p.size() != n) throw BundleError("propensities for " + stage_key(st) + " do not match the cohort");
    e->propensities_[s] = p;
    for (Strategy strategy : {Strategy::Imitation, Strategy::Optimal}) {
      Tensor emb = b.tensor(embedding_key(strategy, st));
      if (emb.rows() != n) throw BundleError("embeddings for " + stage_key(st) + " do not match the cohort");
      e->novelty_[idx(strategy)][s] = MahalanobisModel::fit(emb);
      e->embeddings_[idx(strategy)][s] = std::move(emb);
    }
  }
  e->digest_ = b.digest;
  return e;
}

std::shared_ptr<const TwinEngine> TwinEngine::load(const std::filesystem::path& path) {
  return from_bundle(load_bundle(path));
}

// ------------------------------------------------------------- report

MetricReport evaluate_engine(const TwinEngine& engine, const Cohort& cohort) {
  if (cohort.empty()) throw UsageError("evaluation cohort is empty");
  MetricReport report;
  const auto& enc = engine.encoder();
  const auto& sim = engine.simulator();
  const std::size_t n = cohort.size();

  // Transitions. Untreated IC rows are stable by construction and left out.
  for (Stage st : {Stage::IC, Stage::CC}) {
    Cohort rows;
    for (const auto& r : cohort) {
      if (st == Stage::CC || r.sequence.ic()) rows.push_back(r);
    }
    const std::string model = st == Stage::IC ? "post_ic" : "post_cc";
    if (rows.empty()) continue;
    std::vector<double> d(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) d[i] = rows[i].sequence.at(st) ? 1.0 : 0.0;
    const auto pred = (st == Stage::IC ? sim.post_ic() : sim.post_cc()).predict(enc.encode_rows(rows, st), d);
    for (int which = 0; which < 2; ++which) {
      Tensor scores = Tensor::matrix(rows.size(), 4);
      std::vector<std::size_t> labels(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& t = st == Stage::IC ? rows[i].post_ic : rows[i].post_cc;
        const auto& probs = which == 0 ? pred[i].primary : pred[i].nodal;
        for (std::size_t k = 0; k < 4; ++k) scores(i, k) = probs[k];
        labels[i] = static_cast<std::size_t>(which == 0 ? t.primary : t.nodal);
      }
      const std::string output = which == 0 ? "primary_response" : "nodal_response";
      try {
        const auto m = multiclass_auc(scores, labels);
        report.add(model, output, "auc_micro", m.micro);
        report.add(model, output, "auc_weighted", m.weighted);
      } catch (const UsageError&) {
        report.add(model, output, "auc_micro", std::nullopt);
        report.add(model, output, "auc_weighted", std::nullopt);
      }
    }
    for (std::size_t k = 0; k < kDltTypes; ++k) {
      std::vector<double> s(rows.size());
      std::vector<int> y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        s[i] = pred[i].dlt[k];
        y[i] = (st == Stage::IC ? rows[i].post_ic : rows[i].post_cc).dlt[k];
      }
      report.add_binary(model, "dlt_" + std::string(dlt_name(k)), binary_metrics(s, y));
    }
  }

  const Tensor x = enc.encode_rows_full(cohort);
  const Tensor dec = decision_matrix(cohort);
  const Tensor risks = sim.static_model().predict(x, dec);
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = risks(i, j);
      y[i] = j == 0 ? cohort[i].outcome.feeding_tube : cohort[i].outcome.aspiration_post;
    }
    report.add_binary("static", j == 0 ? "feeding_tube" : "aspiration", binary_metrics(s, y));
  }

  const auto mixtures = sim.survival().predict(x, dec);
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    std::vector<LogNormalMixture> curves(n);
    std::vector<EndpointOutcome> outcomes(n);
    for (std::size_t i = 0; i < n; ++i) {
      curves[i] = mixtures[i][e];
      outcomes[i] = cohort[i].outcome.endpoints[e];
    }
    const std::string output(endpoint_name(static_cast<Endpoint>(e)));
    for (double h : kReportHorizons) {
      const std::string suffix = "@" + std::to_string(static_cast<int>(h));
      try {
        const auto m = horizon_metrics(curves, outcomes, h);
        report.add("survival", output, "auc" + suffix, m.auc);
        report.add("survival", output, "f1" + suffix, m.f1);
      } catch (const UsageError&) {
        report.add("survival", output, "auc" + suffix, std::nullopt);
        report.add("survival", output, "f1" + suffix, std::nullopt);
      }
    }
  }

  const auto optimal = compute_optimal_labels(sim, cohort, engine.config().objective);
  for (std::size_t s = 0; s < kStages; ++s) {
    const Stage st = static_cast<Stage>(s);
    const Tensor xs = enc.encode_rows(cohort, st);
    const std::vector<Stage> stages(n, st);
    for (Strategy strategy : {Strategy::Imitation, Strategy::Optimal}) {
      const auto out = engine.policy().predict_rows(xs, stages, strategy);
      std::vector<double> p(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = out[i].probability;
        y[i] = (strategy == Strategy::Imitation ? cohort[i].sequence : optimal[i]).decisions[s];
      }
      report.add_binary(std::string("policy_") + strategy_name(strategy), std::string(stage_name(st)),
                        binary_metrics(p, y));
    }
  }
  return report;
}

}  // namespace dtwin
