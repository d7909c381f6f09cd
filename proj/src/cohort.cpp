#include "dtwin/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dtwin/random.hpp"

namespace dtwin {

namespace {

constexpr std::array<std::string_view, kSubsites> kSubsiteNames = {
    "bot", "tonsil", "gps", "soft_palate", "pharyngeal_wall", "nos"};

constexpr std::array<std::string_view, kDltTypes> kDltNames = {
    "hematological", "neurological", "dermatological", "gastrointestinal", "other"};

// Seven neck levels per side, left then right.
constexpr std::array<std::string_view, kLymphNodeRegions> kRegionNames = {
    "left_ia",  "left_ib",  "left_iia",  "left_iib",  "left_iii",  "left_iv",  "left_v",
    "right_ia", "right_ib", "right_iia", "right_iib", "right_iii", "right_iv", "right_v"};

std::string two_digit(std::size_t i) {
  std::string s = std::to_string(i);
  return s.size() == 1 ? "0" + s : s;
}

}  // namespace

std::size_t TreatmentSequence::treatment_count() const {
  return static_cast<std::size_t>(decisions[0]) + decisions[1] + decisions[2];
}

std::size_t TreatmentSequence::index() const {
  return (decisions[0] ? 4u : 0u) + (decisions[1] ? 2u : 0u) + (decisions[2] ? 1u : 0u);
}

TreatmentSequence TreatmentSequence::from_index(std::size_t index, Provenance provenance) {
  if (index >= kSequences) throw DomainError("treatment sequence index " + std::to_string(index) + " out of range");
  TreatmentSequence s;
  s.decisions = {(index & 4u) != 0, (index & 2u) != 0, (index & 1u) != 0};
  s.provenance.fill(provenance);
  return s;
}

std::string TreatmentSequence::label() const {
  std::string out;
  for (std::size_t i = 0; i < kStages; ++i) {
    if (!decisions[i]) continue;
    if (!out.empty()) out += "+";
    out += stage_name(static_cast<Stage>(i));
  }
  return out.empty() ? "None" : out;
}

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::IC: return "IC";
    case Stage::CC: return "CC";
    case Stage::ND: return "ND";
  }
  return "?";
}

std::string_view endpoint_name(Endpoint e) {
  switch (e) {
    case Endpoint::OS: return "OS";
    case Endpoint::LRC: return "LRC";
    case Endpoint::FDM: return "FDM";
  }
  return "?";
}

std::string_view subsite_name(Subsite s) { return kSubsiteNames.at(static_cast<std::size_t>(s)); }
std::string_view dlt_name(std::size_t i) { return kDltNames.at(i); }
std::string_view lymph_node_region_name(std::size_t i) { return kRegionNames.at(i); }

Stage parse_stage(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ic") return Stage::IC;
  if (lower == "cc") return Stage::CC;
  if (lower == "nd") return Stage::ND;
  throw DomainError("unknown decision stage '" + std::string(name) + "' (expected IC, CC or ND)");
}

Subsite parse_subsite(std::string_view name) {
  for (std::size_t i = 0; i < kSubsites; ++i) {
    if (kSubsiteNames[i] == name || std::to_string(i) == name) return static_cast<Subsite>(i);
  }
  throw DomainError("unknown subsite '" + std::string(name) + "'");
}

// ----------------------------------------------------------------- validation

std::vector<Diagnostic> validate_features(const PatientFeatures& p, std::size_t row) {
  std::vector<Diagnostic> out;
  auto fail = [&](std::string field, std::string msg) { out.push_back({row, std::move(field), std::move(msg)}); };
  auto ordinal = [&](const char* field, int v, int lo, int hi) {
    if (v < lo || v > hi) {
      fail(field, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  };
  if (!std::isfinite(p.age) || p.age <= 0.0 || p.age > 120.0) fail("age", "age must be in (0, 120]");
  if (static_cast<int>(p.race) > 3) fail("race_other", "unknown race code");
  if (static_cast<int>(p.hpv) > 2) fail("hpv", "hpv must be 0 (negative), 1 (positive) or 2 (unknown)");
  ordinal("smoking", p.smoking, kSmokingMin, kSmokingMax);
  if (!std::isfinite(p.pack_years) || p.pack_years < 0.0) fail("pack_years", "pack_years must be >= 0");
  ordinal("t_stage", p.t_stage, kTStageMin, kTStageMax);
  ordinal("n_stage", p.n_stage, kNStageMin, kNStageMax);
  ordinal("ajcc", p.ajcc, kAjccMin, kAjccMax);
  ordinal("grade", p.grade, kGradeMin, kGradeMax);
  if (static_cast<std::size_t>(p.subsite) >= kSubsites) fail("subsite", "unknown subsite code");
  if (!std::isfinite(p.total_dose) || p.total_dose <= 0.0) fail("total_dose", "total_dose must be > 0");
  if (!std::isfinite(p.dose_fraction) || p.dose_fraction <= 0.0) fail("dose_fraction", "dose_fraction must be > 0");
  return out;
}

std::vector<Diagnostic> validate_record(const CohortRecord& r, std::size_t row) {
  std::vector<Diagnostic> out = validate_features(r.features, row);
  auto fail = [&](std::string field, std::string msg) { out.push_back({row, std::move(field), std::move(msg)}); };
  auto response = [&](const char* field, Response v) {
    if (static_cast<int>(v) > 3) fail(field, "response must be in [0, 3]");
  };
  response("pr_ic", r.post_ic.primary);
  response("nr_ic", r.post_ic.nodal);
  response("pr_cc", r.post_cc.primary);
  response("nr_cc", r.post_cc.nodal);
  if (!r.sequence.ic()) {
    if (r.post_ic.primary != Response::Stable) fail("pr_ic", "response must be stable (1) when ic = 0");
    if (r.post_ic.nodal != Response::Stable) fail("nr_ic", "response must be stable (1) when ic = 0");
  }
  static const std::array<std::string, kEndpoints> time_cols = {"os_months", "lrc_months", "fdm_months"};
  for (std::size_t e = 0; e < kEndpoints; ++e) {
    const double t = r.outcome.endpoints[e].months;
    if (!std::isfinite(t) || t <= 0.0) fail(time_cols[e], "time must be > 0");
  }
  return out;
}

// ------------------------------------------------------------------------ CSV

const std::vector<std::string>& cohort_csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"age", "male", "race_black", "race_hispanic", "race_other", "hpv", "smoking",
                                  "pack_years"};
    for (std::size_t i = 1; i <= kLymphNodeRegions; ++i) c.push_back("ln_" + two_digit(i));
    for (const char* n : {"t_stage", "n_stage", "ajcc", "grade", "subsite", "bilateral", "total_dose",
                          "dose_fraction", "asp_pre", "ic", "cc", "nd", "pr_ic", "nr_ic"}) {
      c.emplace_back(n);
    }
    for (std::size_t i = 1; i <= kDltTypes; ++i) c.push_back("dlt1_" + std::to_string(i));
    c.emplace_back("pr_cc");
    c.emplace_back("nr_cc");
    for (std::size_t i = 1; i <= kDltTypes; ++i) c.push_back("dlt2_" + std::to_string(i));
    for (const char* n : {"os_event", "os_months", "lrc_event", "lrc_months", "fdm_event", "fdm_months", "ft",
                          "asp_post"}) {
      c.emplace_back(n);
    }
    return c;
  }();
  return cols;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
    out.push_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Reads one row's cells by column name, collecting diagnostics.
class RowReader {
 public:
  RowReader(const std::vector<std::string_view>& cells, const std::vector<std::size_t>& index, std::size_t row,
            std::vector<Diagnostic>& diags)
      : cells_(cells), index_(index), row_(row), diags_(diags) {}

  double real(std::size_t col) {
    std::string_view cell = cells_[index_[col]];
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
      fail(col, "'" + std::string(cell) + "' is not a number");
      return 0.0;
    }
    return v;
  }

  int integer(std::size_t col, int lo, int hi) {
    std::string_view cell = cells_[index_[col]];
    int v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
      fail(col, "'" + std::string(cell) + "' is not an integer");
      return lo;
    }
    if (v < lo || v > hi) {
      fail(col, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return lo;
    }
    return v;
  }

  bool flag(std::size_t col) { return integer(col, 0, 1) == 1; }

  std::string_view raw(std::size_t col) const { return cells_[index_[col]]; }

  void fail(std::size_t col, std::string msg) {
    diags_.push_back({row_, cohort_csv_columns()[col], std::move(msg)});
  }

 private:
  const std::vector<std::string_view>& cells_;
  const std::vector<std::size_t>& index_;
  std::size_t row_;
  std::vector<Diagnostic>& diags_;
};

}  // namespace

Cohort parse_cohort_csv(std::string_view text) {
  const auto& columns = cohort_csv_columns();
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t pos = text.find('\n', start);
      std::string_view line = text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError({{0, "header", "empty cohort file"}});
  std::string_view header = lines[0];
  if (header.size() >= 3 && header.substr(0, 3) == "\xEF\xBB\xBF") header.remove_prefix(3);

  const auto names = split_line(header);
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

  Cohort cohort;
  cohort.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t row = li;
    const auto cells = split_line(lines[li]);
    if (cells.size() != names.size()) {
      diags.push_back({row, "*", "expected " + std::to_string(names.size()) + " cells, found " +
                                     std::to_string(cells.size())});
      continue;
    }
    const std::size_t before = diags.size();
    RowReader rd(cells, index, row, diags);
    CohortRecord r;
    std::size_t c = 0;
    PatientFeatures& p = r.features;
    p.age = rd.real(c++);
    p.male = rd.flag(c++);
    const bool black = rd.flag(c++), hispanic = rd.flag(c++), other = rd.flag(c++);
    if (black + hispanic + other > 1) rd.fail(c - 1, "at most one race flag may be set");
    p.race = black ? Race::Black : hispanic ? Race::Hispanic : other ? Race::Other : Race::White;
    p.hpv = static_cast<Hpv>(rd.integer(c++, 0, 2));
    p.smoking = rd.integer(c++, kSmokingMin, kSmokingMax);
    p.pack_years = rd.real(c++);
    for (std::size_t i = 0; i < kLymphNodeRegions; ++i) p.lymph_nodes[i] = rd.flag(c++);
    p.t_stage = rd.integer(c++, kTStageMin, kTStageMax);
    p.n_stage = rd.integer(c++, kNStageMin, kNStageMax);
    p.ajcc = rd.integer(c++, kAjccMin, kAjccMax);
    p.grade = rd.integer(c++, kGradeMin, kGradeMax);
    try {
      p.subsite = parse_subsite(rd.raw(c));
    } catch (const DomainError& e) {
      rd.fail(c, e.what());
    }
    ++c;
    p.bilateral = rd.flag(c++);
    p.total_dose = rd.real(c++);
    p.dose_fraction = rd.real(c++);
    p.aspiration_pre = rd.flag(c++);
    for (std::size_t s = 0; s < kStages; ++s) r.sequence.decisions[s] = rd.flag(c++);
    r.post_ic.primary = static_cast<Response>(rd.integer(c++, 0, 3));
    r.post_ic.nodal = static_cast<Response>(rd.integer(c++, 0, 3));
    for (std::size_t i = 0; i < kDltTypes; ++i) r.post_ic.dlt[i] = rd.flag(c++);
    r.post_cc.primary = static_cast<Response>(rd.integer(c++, 0, 3));
    r.post_cc.nodal = static_cast<Response>(rd.integer(c++, 0, 3));
    for (std::size_t i = 0; i < kDltTypes; ++i) r.post_cc.dlt[i] = rd.flag(c++);
    for (std::size_t e = 0; e < kEndpoints; ++e) {
      r.outcome.endpoints[e].event = rd.flag(c++);
      r.outcome.endpoints[e].months = rd.real(c++);
    }
    r.outcome.feeding_tube = rd.flag(c++);
    r.outcome.aspiration_post = rd.flag(c++);
    if (diags.size() == before) {
      auto more = validate_record(r, row);
      diags.insert(diags.end(), more.begin(), more.end());
    }
    cohort.push_back(std::move(r));
  }
  if (!diags.empty()) throw ValidationError(std::move(diags));
  return cohort;
}

Cohort load_cohort_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open cohort file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_cohort_csv(ss.str());
}

std::string format_cohort_csv(const Cohort& cohort) {
  const auto& columns = cohort_csv_columns();
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) out += ',';
    out += columns[c];
  }
  out += '\n';
  std::vector<std::string> cells;
  for (const auto& r : cohort) {
    cells.clear();
    auto b = [&](bool v) { cells.emplace_back(v ? "1" : "0"); };
    auto i = [&](int v) { cells.push_back(std::to_string(v)); };
    auto d = [&](double v) { cells.push_back(format_double(v)); };
    const PatientFeatures& p = r.features;
    d(p.age);
    b(p.male);
    b(p.race == Race::Black);
    b(p.race == Race::Hispanic);
    b(p.race == Race::Other);
    i(static_cast<int>(p.hpv));
    i(p.smoking);
    d(p.pack_years);
    for (bool v : p.lymph_nodes) b(v);
    i(p.t_stage);
    i(p.n_stage);
    i(p.ajcc);
    i(p.grade);
    cells.emplace_back(subsite_name(p.subsite));
    b(p.bilateral);
    d(p.total_dose);
    d(p.dose_fraction);
    b(p.aspiration_pre);
    for (bool v : r.sequence.decisions) b(v);
    for (const TransitionState* t : {&r.post_ic, &r.post_cc}) {
      i(static_cast<int>(t->primary));
      i(static_cast<int>(t->nodal));
      for (bool v : t->dlt) b(v);
    }
    for (const auto& e : r.outcome.endpoints) {
      b(e.event);
      d(e.months);
    }
    b(r.outcome.feeding_tube);
    b(r.outcome.aspiration_post);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += ',';
      out += cells[c];
    }
    out += '\n';
  }
  return out;
}

void write_cohort_csv(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write cohort file " + path.string());
  out << format_cohort_csv(cohort);
  if (!out) throw Error("write failed for " + path.string());
}

// ---------------------------------------------------------------------- split

const std::vector<BinaryEndpoint>& split_endpoints() {
  static const std::vector<BinaryEndpoint> eps = [] {
    std::vector<BinaryEndpoint> v;
    v.push_back({"ic", [](const CohortRecord& r) { return r.sequence.ic(); }});
    v.push_back({"cc", [](const CohortRecord& r) { return r.sequence.cc(); }});
    v.push_back({"nd", [](const CohortRecord& r) { return r.sequence.nd(); }});
    v.push_back({"dlt1_1", [](const CohortRecord& r) { return r.post_ic.dlt[0]; }});
    v.push_back({"dlt1_2", [](const CohortRecord& r) { return r.post_ic.dlt[1]; }});
    v.push_back({"dlt1_3", [](const CohortRecord& r) { return r.post_ic.dlt[2]; }});
    v.push_back({"dlt1_4", [](const CohortRecord& r) { return r.post_ic.dlt[3]; }});
    v.push_back({"dlt1_5", [](const CohortRecord& r) { return r.post_ic.dlt[4]; }});
    v.push_back({"dlt2_1", [](const CohortRecord& r) { return r.post_cc.dlt[0]; }});
    v.push_back({"dlt2_2", [](const CohortRecord& r) { return r.post_cc.dlt[1]; }});
    v.push_back({"dlt2_3", [](const CohortRecord& r) { return r.post_cc.dlt[2]; }});
    v.push_back({"dlt2_4", [](const CohortRecord& r) { return r.post_cc.dlt[3]; }});
    v.push_back({"dlt2_5", [](const CohortRecord& r) { return r.post_cc.dlt[4]; }});
    v.push_back({"os_event", [](const CohortRecord& r) { return r.outcome.endpoints[0].event; }});
    v.push_back({"lrc_event", [](const CohortRecord& r) { return r.outcome.endpoints[1].event; }});
    v.push_back({"fdm_event", [](const CohortRecord& r) { return r.outcome.endpoints[2].event; }});
    v.push_back({"ft", [](const CohortRecord& r) { return r.outcome.feeding_tube; }});
    v.push_back({"asp_post", [](const CohortRecord& r) { return r.outcome.aspiration_post; }});
    return v;
  }();
  return eps;
}

CohortSplit stratified_split(const Cohort& cohort, std::uint64_t seed) {
  const std::size_t n = cohort.size();
  const std::size_t reference = kReferenceTrainSize + kReferenceEvalSize;
  const std::size_t n_train = (n * kReferenceTrainSize + reference / 2) / reference;

  std::vector<std::string> infeasible;
  for (const auto& ep : split_endpoints()) {
    std::size_t pos = 0;
    for (const auto& r : cohort) pos += ep.positive(r);
    if (pos < kMinPositivesPerEndpoint) {
      infeasible.push_back(ep.name + " (" + std::to_string(pos) + " positives)");
    }
  }
  if (!infeasible.empty()) {
    std::string msg = "split infeasible: fewer than 3 positives for";
    for (const auto& s : infeasible) msg += " " + s;
    throw ConfigError(msg);
  }

  std::mt19937_64 rng(derive_seed(seed, 0x5b11u));
  // Shuffle within treatment-sequence strata, then interleave the strata so a
  // prefix of the order is close to proportional.
  std::array<std::vector<std::size_t>, kSequences> strata;
  for (std::size_t i = 0; i < n; ++i) strata[cohort[i].sequence.index()].push_back(i);
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(n);
  for (auto& s : strata) {
    shuffle_range(s.begin(), s.end(), rng);
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double key = (static_cast<double>(j) + uniform01(rng)) / static_cast<double>(s.size());
      keyed.emplace_back(key, s[j]);
    }
  }
  std::sort(keyed.begin(), keyed.end());

  std::vector<char> in_train(n, 0);
  std::size_t taken = 0;
  for (const auto& ep : split_endpoints()) {
    std::size_t have = 0;
    for (std::size_t i = 0; i < n; ++i) have += in_train[i] && ep.positive(cohort[i]);
    for (const auto& [key, i] : keyed) {
      if (have >= kMinPositivesPerEndpoint) break;
      if (!in_train[i] && ep.positive(cohort[i])) {
        in_train[i] = 1;
        ++taken;
        ++have;
      }
    }
  }
  if (taken > n_train) {
    throw ConfigError("split infeasible: " + std::to_string(taken) + " records needed for endpoint minimums exceed " +
                      std::to_string(n_train) + " training slots");
  }
  for (const auto& [key, i] : keyed) {
    if (taken >= n_train) break;
    if (!in_train[i]) {
      in_train[i] = 1;
      ++taken;
    }
  }

  CohortSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    if (in_train[i]) {
      split.train_ids.push_back(i);
      split.train.push_back(cohort[i]);
    } else {
      split.eval_ids.push_back(i);
      split.eval.push_back(cohort[i]);
    }
  }
  return split;
}

}  // namespace dtwin
