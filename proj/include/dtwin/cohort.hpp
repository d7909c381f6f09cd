#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dtwin/error.hpp"

namespace dtwin {

inline constexpr std::size_t kLymphNodeRegions = 14;
inline constexpr std::size_t kDltTypes = 5;
inline constexpr std::size_t kStages = 3;
inline constexpr std::size_t kEndpoints = 3;
inline constexpr std::size_t kSequences = 8;

enum class Hpv : std::uint8_t { Negative = 0, Positive = 1, Unknown = 2 };

// White is the reference level (no race flag set).
enum class Race : std::uint8_t { White = 0, Black = 1, Hispanic = 2, Other = 3 };

enum class Subsite : std::uint8_t {
  BaseOfTongue = 0,
  Tonsil = 1,
  GlossopharyngealSulcus = 2,
  SoftPalate = 3,
  PharyngealWall = 4,
  NotOtherwiseSpecified = 5,
};
inline constexpr std::size_t kSubsites = 6;

// Decision stages in treatment order.
enum class Stage : std::uint8_t { IC = 0, CC = 1, ND = 2 };

enum class Endpoint : std::uint8_t { OS = 0, LRC = 1, FDM = 2 };

// Ordinal tumor response levels.
enum class Response : std::uint8_t { Progressive = 0, Stable = 1, Partial = 2, Complete = 3 };

enum class Provenance : std::uint8_t { GroundTruth = 0, UserFixed = 1, PolicyDecided = 2 };

// Ordinal ranges (inclusive).
inline constexpr int kTStageMin = 1, kTStageMax = 4;
inline constexpr int kNStageMin = 0, kNStageMax = 3;
inline constexpr int kAjccMin = 1, kAjccMax = 4;
inline constexpr int kGradeMin = 1, kGradeMax = 4;
inline constexpr int kSmokingMin = 0, kSmokingMax = 2;  // never / former / current

struct PatientFeatures {
  double age = 60.0;
  bool male = true;
  Race race = Race::White;
  Hpv hpv = Hpv::Positive;
  int smoking = 0;
  double pack_years = 0.0;
  std::array<bool, kLymphNodeRegions> lymph_nodes{};
  int t_stage = 1;
  int n_stage = 0;
  int ajcc = 1;
  int grade = 1;
  Subsite subsite = Subsite::BaseOfTongue;
  bool bilateral = false;
  double total_dose = 70.0;
  double dose_fraction = 2.0;
  bool aspiration_pre = false;

  friend bool operator==(const PatientFeatures&, const PatientFeatures&) = default;
};

struct TreatmentSequence {
  std::array<bool, kStages> decisions{};
  std::array<Provenance, kStages> provenance{};

  bool ic() const { return decisions[0]; }
  bool cc() const { return decisions[1]; }
  bool nd() const { return decisions[2]; }
  bool at(Stage s) const { return decisions[static_cast<std::size_t>(s)]; }
  std::size_t treatment_count() const;
  // ic*4 + cc*2 + nd.
  std::size_t index() const;
  static TreatmentSequence from_index(std::size_t index, Provenance provenance = Provenance::GroundTruth);
  std::string label() const;  // e.g. "IC+CC", "None"

  friend bool operator==(const TreatmentSequence&, const TreatmentSequence&) = default;
};

struct TransitionState {
  Response primary = Response::Stable;
  Response nodal = Response::Stable;
  std::array<bool, kDltTypes> dlt{};

  friend bool operator==(const TransitionState&, const TransitionState&) = default;
};

struct EndpointOutcome {
  bool event = false;
  double months = 0.0;  // event time or last follow-up

  friend bool operator==(const EndpointOutcome&, const EndpointOutcome&) = default;
};

struct OutcomeRecord {
  std::array<EndpointOutcome, kEndpoints> endpoints{};
  bool feeding_tube = false;
  bool aspiration_post = false;

  const EndpointOutcome& at(Endpoint e) const { return endpoints[static_cast<std::size_t>(e)]; }
  friend bool operator==(const OutcomeRecord&, const OutcomeRecord&) = default;
};

struct CohortRecord {
  PatientFeatures features;
  TreatmentSequence sequence;
  TransitionState post_ic;
  TransitionState post_cc;
  OutcomeRecord outcome;

  friend bool operator==(const CohortRecord&, const CohortRecord&) = default;
};

using Cohort = std::vector<CohortRecord>;

std::string_view stage_name(Stage s);
std::string_view endpoint_name(Endpoint e);
std::string_view subsite_name(Subsite s);
std::string_view dlt_name(std::size_t i);
std::string_view lymph_node_region_name(std::size_t i);
Stage parse_stage(std::string_view name);
Subsite parse_subsite(std::string_view name);

// Checks the type invariants; one diagnostic per violation, tagged with the
// CSV column name and the given row.
std::vector<Diagnostic> validate_features(const PatientFeatures& p, std::size_t row = 0);
std::vector<Diagnostic> validate_record(const CohortRecord& r, std::size_t row = 0);

// Column names of the cohort CSV, in file order.
const std::vector<std::string>& cohort_csv_columns();

Cohort load_cohort_csv(const std::filesystem::path& path);
Cohort parse_cohort_csv(std::string_view text);
std::string format_cohort_csv(const Cohort& cohort);
void write_cohort_csv(const Cohort& cohort, const std::filesystem::path& path);

// Shortest round-trip decimal representation.
std::string format_double(double v);

// Binary endpoints that the split guarantees positives for, with accessors.
struct BinaryEndpoint {
  std::string name;
  bool (*positive)(const CohortRecord&);
};
const std::vector<BinaryEndpoint>& split_endpoints();

struct CohortSplit {
  Cohort train;
  Cohort eval;
  std::vector<std::size_t> train_ids;  // indices into the input cohort
  std::vector<std::size_t> eval_ids;
};

inline constexpr std::size_t kReferenceTrainSize = 389;
inline constexpr std::size_t kReferenceEvalSize = 147;
inline constexpr std::size_t kMinPositivesPerEndpoint = 3;

// Partition in the 389:147 ratio with at least three positives of every
// binary endpoint and treatment decision on the training side.
CohortSplit stratified_split(const Cohort& cohort, std::uint64_t seed);

}  // namespace dtwin
