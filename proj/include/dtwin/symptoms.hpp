#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dtwin/cohort.hpp"
#include "dtwin/nn.hpp"
#include "dtwin/training.hpp"

namespace dtwin {

inline constexpr std::size_t kSymptoms = 10;
inline constexpr std::size_t kSymptomTimepoints = 4;
inline constexpr std::size_t kSymptomOutputs = kSymptoms * kSymptomTimepoints;
inline constexpr std::array<int, kSymptomTimepoints> kSymptomWeeks = {0, 7, 12, 27};
inline constexpr double kMaxRating = 10.0;
inline constexpr std::size_t kSymptomCohortSize = 937;
inline constexpr std::size_t kSymptomNeighbors = 10;

// drymouth, swallow, taste, pain, fatigue, mucus, appetite, voice, choking, sleep
const std::array<std::string, kSymptoms>& default_symptom_names();

// Reduced pre-treatment features plus the IC and CC decisions.
struct SymptomFeatures {
  bool male = true;
  double pack_years = 0.0;
  Hpv hpv = Hpv::Positive;
  double total_dose = 70.0;
  double dose_fraction = 2.0;
  Race race = Race::White;
  bool bilateral = false;
  Subsite subsite = Subsite::BaseOfTongue;
  int t_stage = 1;
  int n_stage = 0;
  bool ic = false;
  bool cc = false;

  static SymptomFeatures from_patient(const PatientFeatures& p, bool ic, bool cc);
  friend bool operator==(const SymptomFeatures&, const SymptomFeatures&) = default;
};

// Ratings in [0,10]; NaN marks a missing rating. Index symptom * 4 + timepoint.
using SymptomRatings = std::array<double, kSymptomOutputs>;

struct SymptomRecord {
  SymptomFeatures features;
  SymptomRatings ratings{};
};

using SymptomCohort = std::vector<SymptomRecord>;

bool rating_missing(double v);
std::size_t rating_index(std::size_t symptom, std::size_t timepoint);

// Columns: the 12 feature columns, then <symptom>_w<week> for every rating.
// An empty rating cell is missing.
const std::vector<std::string>& symptom_csv_columns();
SymptomCohort parse_symptom_csv(std::string_view text);
SymptomCohort load_symptom_csv(const std::filesystem::path& path);
std::string format_symptom_csv(const SymptomCohort& cohort);
void write_symptom_csv(const SymptomCohort& cohort, const std::filesystem::path& path);

// Synthetic self-reported outcomes. Features come from the treatment cohort
// generator; each symptom rises from baseline to a peak at week 7 and
// partially recovers, with severity driven by dose, CC, IC, subsite and
// smoking. About 8% of ratings are missing at random, 20% at week 27.
SymptomCohort generate_symptom_cohort(std::uint64_t seed, std::size_t n = kSymptomCohortSize);

// 20 slots: male, race x3, hpv positive/unknown, pack_years (z), t, n
// (scaled to [0,1]), subsite x6, bilateral, total_dose (z),
// dose_fraction (z), ic, cc.
inline constexpr std::size_t kSymptomEncodedWidth = 20;

class SymptomEncoder {
 public:
  SymptomEncoder() = default;
  SymptomEncoder(std::array<double, 3> mean, std::array<double, 3> sd) : mean_(mean), sd_(sd) {}
  static SymptomEncoder fit(const SymptomCohort& cohort);

  std::vector<double> encode(const SymptomFeatures& f) const;
  Tensor encode_rows(const SymptomCohort& cohort) const;
  const std::array<double, 3>& mean() const noexcept { return mean_; }
  const std::array<double, 3>& sd() const noexcept { return sd_; }

 private:
  std::array<double, 3> mean_{};
  std::array<double, 3> sd_{1.0, 1.0, 1.0};
};

struct SymptomConfig {
  std::size_t hidden = 10;
  TrainConfig train;
};

struct SymptomTrajectories {
  std::size_t symptom = 0;
  std::string name;
  std::vector<std::array<double, kSymptomTimepoints>> treated;  // NaN where missing
  std::vector<std::array<double, kSymptomTimepoints>> untreated;
  std::array<double, kSymptomTimepoints> treated_median{};  // over present values; NaN if none
  std::array<double, kSymptomTimepoints> untreated_median{};
};

struct SymptomPrediction {
  Stage treatment = Stage::CC;
  std::vector<std::size_t> treated_ids;
  std::vector<std::size_t> untreated_ids;
  bool low_support = false;  // a group had fewer than 10 members
  // Ordered by descending final-timepoint median over both groups pooled;
  // ties keep symptom order.
  std::vector<SymptomTrajectories> symptoms;
};

// MLP 20 -> 10 ReLU -> BatchNorm -> 40, outputs 10 * sigmoid. The
// batch-normalized hidden layer is the embedding.
class SymptomModel {
 public:
  SymptomModel() = default;
  SymptomModel(SymptomEncoder encoder, const SymptomConfig& config, std::uint64_t seed);
  // Rebinds to trained parameters and a stored cohort.
  SymptomModel(SymptomEncoder encoder, ParameterSet params, SymptomCohort cohort);
  SymptomModel(const SymptomModel& other);
  SymptomModel& operator=(const SymptomModel& other);
  SymptomModel(SymptomModel&&) noexcept = default;
  SymptomModel& operator=(SymptomModel&&) noexcept = default;

  // 80/20 split, masked MSE, early stopping. Keeps the cohort and its embeddings.
  static SymptomModel fit(const SymptomCohort& cohort, std::uint64_t seed, const SymptomConfig& config = {},
                          TrainHistory* history = nullptr);

  bool trained() const noexcept { return trained_; }
  // {ratings [n,40], embedding [n,hidden]}
  std::pair<Var, Var> forward(Graph& g, Var x) const;
  Tensor predict(const Tensor& x) const;
  Tensor embed(const Tensor& x) const;
  SymptomRatings predict(const SymptomFeatures& f) const;

  const SymptomEncoder& encoder() const noexcept { return encoder_; }
  const ParameterSet& params() const noexcept { return params_; }
  const SymptomCohort& cohort() const noexcept { return cohort_; }
  const Tensor& embeddings() const noexcept { return embeddings_; }

 private:
  void bind();
  void require_trained() const;
  SymptomEncoder encoder_;
  ParameterSet params_;
  Linear hidden_, out_;
  BatchNorm norm_;
  SymptomCohort cohort_;
  Tensor embeddings_;
  bool trained_ = false;
};

// Mean squared error over present ratings of [n,40] predictions.
double masked_mse(const Tensor& predicted, const SymptomCohort& cohort);

// 10 nearest treated and untreated cohort members for `treatment` (IC or
// CC), their trajectories and per-group medians.
SymptomPrediction predict_trajectories(const SymptomModel& model, const SymptomFeatures& patient, Stage treatment,
                                       std::size_t neighbors = kSymptomNeighbors);

// Median of the non-missing values; NaN when none are present.
double median_present(std::vector<double> values);

}  // namespace dtwin
