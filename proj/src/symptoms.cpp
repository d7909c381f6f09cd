#include "dtwin/symptoms.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dtwin/error.hpp"
#include "dtwin/neighbors.hpp"
#include "dtwin/random.hpp"
#include "dtwin/synthetic.hpp"

namespace dtwin {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

}  // namespace

const std::array<std::string, kSymptoms>& default_symptom_names() {
  static const std::array<std::string, kSymptoms> names = {"drymouth", "swallow",  "taste", "pain",    "fatigue",
                                                           "mucus",    "appetite", "voice", "choking", "sleep"};
  return names;
}

SymptomFeatures SymptomFeatures::from_patient(const PatientFeatures& p, bool ic, bool cc) {
  SymptomFeatures f;
  f.male = p.male;
  f.pack_years = p.pack_years;
  f.hpv = p.hpv;
  f.total_dose = p.total_dose;
  f.dose_fraction = p.dose_fraction;
  f.race = p.race;
  f.bilateral = p.bilateral;
  f.subsite = p.subsite;
  f.t_stage = p.t_stage;
  f.n_stage = p.n_stage;
  f.ic = ic;
  f.cc = cc;
  return f;
}

bool rating_missing(double v) { return std::isnan(v); }

std::size_t rating_index(std::size_t symptom, std::size_t timepoint) {
  if (symptom >= kSymptoms || timepoint >= kSymptomTimepoints) throw UsageError("rating index out of range");
  return symptom * kSymptomTimepoints + timepoint;
}

double median_present(std::vector<double> values) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) return kMissing;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ------------------------------------------------------------------------ CSV

const std::vector<std::string>& symptom_csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"male",      "pack_years", "hpv",     "total_dose", "dose_fraction", "race",
                                  "bilateral", "subsite",    "t_stage", "n_stage",    "ic",            "cc"};
    for (const auto& name : default_symptom_names()) {
      for (int w : kSymptomWeeks) c.push_back(name + "_w" + std::to_string(w));
    }
    return c;
  }();
  return cols;
}

namespace {

constexpr std::size_t kSymptomFeatureColumns = 12;

std::string_view race_key(Race r) {
  switch (r) {
    case Race::White: return "white";
    case Race::Black: return "black";
    case Race::Hispanic: return "hispanic";
    case Race::Other: return "other";
  }
  return "white";
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    out.push_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

SymptomCohort parse_symptom_csv(std::string_view text) {
  const auto& columns = symptom_csv_columns();
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= text.size();) {
    const std::size_t pos = text.find('\n', start);
    lines.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  while (!lines.empty() && (lines.back().empty() || lines.back() == "\r")) lines.pop_back();
  if (lines.empty()) throw ValidationError({{0, "header", "empty symptom file"}});

  const auto names = split_cells(lines[0]);
  std::vector<std::size_t> index(columns.size());
  std::vector<Diagnostic> diags;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    auto it = std::find(names.begin(), names.end(), columns[c]);
    if (it == names.end()) {
      diags.push_back({0, columns[c], "missing column"});
    } else {
      index[c] = static_cast<std::size_t>(it - names.begin());
    }
  }
  if (!diags.empty()) throw ValidationError(std::move(diags));

  SymptomCohort cohort;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto cells = split_cells(lines[row]);
    if (cells.size() != names.size()) {
      diags.push_back({row, "*", "expected " + std::to_string(names.size()) + " cells, found " +
                                     std::to_string(cells.size())});
      continue;
    }
    auto cell = [&](std::size_t c) { return cells[index[c]]; };
    auto fail = [&](std::size_t c, std::string msg) { diags.push_back({row, columns[c], std::move(msg)}); };
    auto real = [&](std::size_t c) {
      const std::string_view s = cell(c);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        fail(c, "'" + std::string(s) + "' is not a number");
        return 0.0;
      }
      return v;
    };
    auto integer = [&](std::size_t c, int lo, int hi) {
      const double v = real(c);
      if (v != std::floor(v) || v < lo || v > hi) {
        fail(c, "expected an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return lo;
      }
      return static_cast<int>(v);
    };
    SymptomRecord r;
    SymptomFeatures& f = r.features;
    f.male = integer(0, 0, 1) == 1;
    f.pack_years = real(1);
    if (f.pack_years < 0.0) fail(1, "pack_years must be >= 0");
    f.hpv = static_cast<Hpv>(integer(2, 0, 2));
    f.total_dose = real(3);
    f.dose_fraction = real(4);
    if (f.total_dose <= 0.0) fail(3, "total_dose must be > 0");
    if (f.dose_fraction <= 0.0) fail(4, "dose_fraction must be > 0");
    {
      const std::string_view s = cell(5);
      bool found = false;
      for (Race race : {Race::White, Race::Black, Race::Hispanic, Race::Other}) {
        if (s == race_key(race)) {
          f.race = race;
          found = true;
        }
      }
      if (!found) fail(5, "unknown race '" + std::string(s) + "'");
    }
    f.bilateral = integer(6, 0, 1) == 1;
    try {
      f.subsite = parse_subsite(cell(7));
    } catch (const DomainError& e) {
      fail(7, e.what());
    }
    f.t_stage = integer(8, kTStageMin, kTStageMax);
    f.n_stage = integer(9, kNStageMin, kNStageMax);
    f.ic = integer(10, 0, 1) == 1;
    f.cc = integer(11, 0, 1) == 1;
    for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
      const std::size_t c = kSymptomFeatureColumns + k;
      if (cell(c).empty()) {
        r.ratings[k] = kMissing;
        continue;
      }
      const double v = real(c);
      if (v < 0.0 || v > kMaxRating) fail(c, "rating outside [0, 10]");
      r.ratings[k] = v;
    }
    cohort.push_back(r);
  }
  if (!diags.empty()) throw ValidationError(std::move(diags));
  return cohort;
}

SymptomCohort load_symptom_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open symptom file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_symptom_csv(ss.str());
}

std::string format_symptom_csv(const SymptomCohort& cohort) {
  const auto& columns = symptom_csv_columns();
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) out += ',';
    out += columns[c];
  }
  out += '\n';
  for (const auto& r : cohort) {
    const SymptomFeatures& f = r.features;
    out += f.male ? "1" : "0";
    out += ',' + format_double(f.pack_years);
    out += ',' + std::to_string(static_cast<int>(f.hpv));
    out += ',' + format_double(f.total_dose);
    out += ',' + format_double(f.dose_fraction);
    out += ',' + std::string(race_key(f.race));
    out += f.bilateral ? ",1" : ",0";
    out += ',' + std::string(subsite_name(f.subsite));
    out += ',' + std::to_string(f.t_stage);
    out += ',' + std::to_string(f.n_stage);
    out += f.ic ? ",1" : ",0";
    out += f.cc ? ",1" : ",0";
    for (double v : r.ratings) {
      out += ',';
      if (!rating_missing(v)) out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void write_symptom_csv(const SymptomCohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write symptom file " + path.string());
  out << format_symptom_csv(cohort);
  if (!out) throw Error("write failed for " + path.string());
}

// ------------------------------------------------------------------ generator

SymptomCohort generate_symptom_cohort(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw ConfigError("symptom cohort size must be > 0");
  const Cohort base = generate_synthetic_cohort(derive_seed(seed, 1), std::max(n, kMinSyntheticCohortSize));
  std::mt19937_64 rng(derive_seed(seed, 2));
  // Pre-treatment level (logit), treatment amplitude, share left at week 27.
  static constexpr std::array<double, kSymptoms> level = {-2.5, -2.2, -2.6, -2.0, -1.6, -2.4, -2.3, -2.1, -2.8, -1.8};
  static constexpr std::array<double, kSymptoms> amplitude = {3.2, 2.8, 3.0, 2.4, 2.2, 2.6, 2.3, 1.6, 1.8, 1.2};
  static constexpr std::array<double, kSymptoms> residual = {0.8, 0.5, 0.55, 0.3, 0.35, 0.5, 0.3, 0.4, 0.45, 0.35};
  SymptomCohort out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const CohortRecord& c = base[i];
    SymptomRecord r;
    r.features = SymptomFeatures::from_patient(c.features, c.sequence.ic(), c.sequence.cc());
    const SymptomFeatures& f = r.features;
    const bool oral = f.subsite == Subsite::BaseOfTongue || f.subsite == Subsite::SoftPalate;
    const double severity = 0.5 + 0.35 * f.cc + 0.15 * f.ic + 0.04 * (f.total_dose - 70.0) + 0.2 * f.bilateral +
                            0.1 * (f.t_stage - 2) + 0.1 * oral;
    const double person = 0.4 * standard_normal(rng);
    for (std::size_t s = 0; s < kSymptoms; ++s) {
      const std::array<double, kSymptomTimepoints> shape = {0.0, 1.0, 0.5 * (1.0 + residual[s]), residual[s]};
      for (std::size_t t = 0; t < kSymptomTimepoints; ++t) {
        const double latent = level[s] + 0.01 * f.pack_years + shape[t] * amplitude[s] * severity + person +
                              0.3 * standard_normal(rng);
        const double rating = std::round(kMaxRating / (1.0 + std::exp(-latent)));
        const double p_missing = t == kSymptomTimepoints - 1 ? 0.2 : 0.08;
        r.ratings[rating_index(s, t)] = bernoulli(rng, p_missing) ? kMissing : std::clamp(rating, 0.0, kMaxRating);
      }
    }
    out.push_back(r);
  }
  return out;
}

// -------------------------------------------------------------------- encoder

SymptomEncoder SymptomEncoder::fit(const SymptomCohort& cohort) {
  if (cohort.empty()) throw UsageError("symptom encoder needs a non-empty cohort");
  std::array<double, 3> mean{}, sd{};
  const double n = static_cast<double>(cohort.size());
  for (const auto& r : cohort) {
    mean[0] += r.features.pack_years / n;
    mean[1] += r.features.total_dose / n;
    mean[2] += r.features.dose_fraction / n;
  }
  for (const auto& r : cohort) {
    const std::array<double, 3> v = {r.features.pack_years, r.features.total_dose, r.features.dose_fraction};
    for (std::size_t j = 0; j < 3; ++j) sd[j] += (v[j] - mean[j]) * (v[j] - mean[j]) / n;
  }
  for (double& s : sd) s = s > 0.0 ? std::sqrt(s) : 1.0;
  return SymptomEncoder(mean, sd);
}

std::vector<double> SymptomEncoder::encode(const SymptomFeatures& f) const {
  std::vector<double> x(kSymptomEncodedWidth, 0.0);
  x[0] = f.male;
  if (f.race != Race::White) x[static_cast<std::size_t>(f.race)] = 1.0;
  x[4] = f.hpv == Hpv::Positive;
  x[5] = f.hpv == Hpv::Unknown;
  x[6] = (f.pack_years - mean_[0]) / sd_[0];
  x[7] = static_cast<double>(f.t_stage - kTStageMin) / (kTStageMax - kTStageMin);
  x[8] = static_cast<double>(f.n_stage - kNStageMin) / (kNStageMax - kNStageMin);
  x[9 + static_cast<std::size_t>(f.subsite)] = 1.0;
  x[15] = f.bilateral;
  x[16] = (f.total_dose - mean_[1]) / sd_[1];
  x[17] = (f.dose_fraction - mean_[2]) / sd_[2];
  x[18] = f.ic;
  x[19] = f.cc;
  return x;
}

Tensor SymptomEncoder::encode_rows(const SymptomCohort& cohort) const {
  Tensor t = Tensor::matrix(cohort.size(), kSymptomEncodedWidth);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto row = encode(cohort[i].features);
    std::copy(row.begin(), row.end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * kSymptomEncodedWidth));
  }
  return t;
}

// ---------------------------------------------------------------------- model

SymptomModel::SymptomModel(SymptomEncoder encoder, const SymptomConfig& config, std::uint64_t seed)
    : encoder_(std::move(encoder)) {
  if (config.hidden == 0) throw ConfigError("symptom model hidden width must be > 0");
  std::mt19937_64 rng(seed);
  hidden_ = Linear(params_, "symptoms.hidden", kSymptomEncodedWidth, config.hidden, rng);
  norm_ = BatchNorm(params_, "symptoms.norm", config.hidden);
  out_ = Linear(params_, "symptoms.out", config.hidden, kSymptomOutputs, rng);
}

SymptomModel::SymptomModel(SymptomEncoder encoder, ParameterSet params, SymptomCohort cohort)
    : encoder_(std::move(encoder)), params_(std::move(params)), cohort_(std::move(cohort)), trained_(true) {
  bind();
  embeddings_ = embed(encoder_.encode_rows(cohort_));
}

SymptomModel::SymptomModel(const SymptomModel& other)
    : encoder_(other.encoder_),
      params_(other.params_),
      cohort_(other.cohort_),
      embeddings_(other.embeddings_),
      trained_(other.trained_) {
  if (params_.size() > 0) bind();
}

SymptomModel& SymptomModel::operator=(const SymptomModel& other) {
  if (this != &other) {
    SymptomModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void SymptomModel::bind() {
  hidden_ = Linear(params_, "symptoms.hidden");
  norm_ = BatchNorm(params_, "symptoms.norm", bind_existing);
  out_ = Linear(params_, "symptoms.out");
}

void SymptomModel::require_trained() const {
  if (!trained_) throw UsageError("symptom model used before training");
}

std::pair<Var, Var> SymptomModel::forward(Graph& g, Var x) const {
  Var e = norm_(g, ad::relu(hidden_(g, x)));
  return {ad::scale(ad::sigmoid(out_(g, e)), kMaxRating), e};
}

Tensor SymptomModel::predict(const Tensor& x) const {
  Graph g(false);
  return forward(g, g.constant(x)).first.value();
}

Tensor SymptomModel::embed(const Tensor& x) const {
  Graph g(false);
  return forward(g, g.constant(x)).second.value();
}

SymptomRatings SymptomModel::predict(const SymptomFeatures& f) const {
  require_trained();
  const Tensor y = predict(Tensor::row(encoder_.encode(f)));
  SymptomRatings r{};
  std::copy(y.data().begin(), y.data().end(), r.begin());
  return r;
}

double masked_mse(const Tensor& predicted, const SymptomCohort& cohort) {
  if (predicted.rows() != cohort.size() || predicted.cols() != kSymptomOutputs) {
    throw ShapeError("masked_mse: predictions must be [cohort, 40]");
  }
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
      const double y = cohort[i].ratings[k];
      if (rating_missing(y)) continue;
      s += (predicted(i, k) - y) * (predicted(i, k) - y);
      ++count;
    }
  }
  if (count == 0) throw UsageError("masked_mse: no ratings present");
  return s / static_cast<double>(count);
}

SymptomModel SymptomModel::fit(const SymptomCohort& cohort, std::uint64_t seed, const SymptomConfig& config,
                               TrainHistory* history) {
  if (cohort.empty()) throw UsageError("symptom model needs a non-empty cohort");
  const auto& columns = symptom_csv_columns();
  for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
    const bool any = std::any_of(cohort.begin(), cohort.end(), [&](const SymptomRecord& r) {
      return !rating_missing(r.ratings[k]);
    });
    if (!any) throw ConfigError("symptom column " + columns[kSymptomFeatureColumns + k] + " has no ratings");
  }
  SymptomModel model(SymptomEncoder::fit(cohort), config, derive_seed(seed, 1));
  const Tensor x = model.encoder_.encode_rows(cohort);
  Tensor y = Tensor::matrix(cohort.size(), kSymptomOutputs);
  Tensor mask = Tensor::matrix(cohort.size(), kSymptomOutputs);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
      const double v = cohort[i].ratings[k];
      const bool present = !rating_missing(v);
      y(i, k) = present ? v : 0.0;
      mask(i, k) = present ? 1.0 : 0.0;
    }
  }
  auto loss = [&](Graph& g, std::span<const std::size_t> rows) {
    const Tensor m = take_rows(mask, rows);
    double count = 0.0;
    for (double v : m.data()) count += v;
    Var pred = model.forward(g, g.constant(take_rows(x, rows))).first;
    Var diff = ad::mul(ad::sub(pred, g.constant(take_rows(y, rows))), g.constant(m));
    return ad::scale(ad::sum(ad::square(diff)), 1.0 / std::max(count, 1.0));
  };
  TrainHistory h = fit_early_stopping(model.params_, cohort.size(), config.train, derive_seed(seed, 2), loss);
  spdlog::info("symptom model: {} epochs, best validation loss {:.4f}", h.val_loss.size(), h.val_loss[h.best_epoch]);
  if (history) *history = std::move(h);
  model.trained_ = true;
  model.cohort_ = cohort;
  model.embeddings_ = model.embed(x);
  return model;
}

// ---------------------------------------------------------------- trajectories

SymptomPrediction predict_trajectories(const SymptomModel& model, const SymptomFeatures& patient, Stage treatment,
                                       std::size_t neighbors) {
  if (!model.trained()) throw UsageError("symptom model used before training");
  if (treatment == Stage::ND) throw UsageError("the symptom cohort records IC and CC only");
  if (neighbors == 0) throw ConfigError("symptom neighbor count must be > 0");
  const auto& cohort = model.cohort();
  const Tensor& emb = model.embeddings();
  const Tensor query = model.embed(Tensor::row(model.encoder().encode(patient)));

  SymptomPrediction out;
  out.treatment = treatment;
  auto nearest = [&](bool treated) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const bool flag = treatment == Stage::IC ? cohort[i].features.ic : cohort[i].features.cc;
      if (flag == treated) members.push_back(i);
    }
    if (members.empty()) return members;
    const Tensor sub = take_rows(emb, members);
    std::vector<std::size_t> ids;
    for (std::size_t j : knn(query.row_span(0), sub, std::min(neighbors, members.size()))) ids.push_back(members[j]);
    return ids;
  };
  out.treated_ids = nearest(true);
  out.untreated_ids = nearest(false);
  out.low_support = out.treated_ids.size() < neighbors || out.untreated_ids.size() < neighbors;

  const auto& names = default_symptom_names();
  std::vector<double> final_median(kSymptoms);
  for (std::size_t s = 0; s < kSymptoms; ++s) {
    SymptomTrajectories tr;
    tr.symptom = s;
    tr.name = names[s];
    auto collect = [&](const std::vector<std::size_t>& ids, auto& rows, auto& median) {
      for (std::size_t id : ids) {
        std::array<double, kSymptomTimepoints> row{};
        for (std::size_t t = 0; t < kSymptomTimepoints; ++t) row[t] = cohort[id].ratings[rating_index(s, t)];
        rows.push_back(row);
      }
      for (std::size_t t = 0; t < kSymptomTimepoints; ++t) {
        std::vector<double> col;
        for (const auto& row : rows) col.push_back(row[t]);
        median[t] = median_present(col);
      }
    };
    collect(out.treated_ids, tr.treated, tr.treated_median);
    collect(out.untreated_ids, tr.untreated, tr.untreated_median);
    std::vector<double> last;
    for (const auto* rows : {&tr.treated, &tr.untreated}) {
      for (const auto& row : *rows) last.push_back(row.back());
    }
    final_median[s] = median_present(last);
    out.symptoms.push_back(std::move(tr));
  }
  auto key = [&](const SymptomTrajectories& t) {
    const double v = final_median[t.symptom];
    return std::isnan(v) ? -1.0 : v;
  };
  std::stable_sort(out.symptoms.begin(), out.symptoms.end(),
                   [&](const SymptomTrajectories& a, const SymptomTrajectories& b) { return key(a) > key(b); });
  return out;
}

}  // namespace dtwin
