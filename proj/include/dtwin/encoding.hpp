#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtwin/cohort.hpp"
#include "dtwin/tensor.hpp"

namespace dtwin {

// Encoded layout: 37 pre-treatment slots followed by 17 stage-context slots.
//   0 age (z)            1 male              2-4 race black/hispanic/other
//   5 hpv positive       6 hpv unknown       7 smoking / 2
//   8 pack_years (z)     9-22 ln_01..ln_14
//  23 t_stage  24 n_stage  25 ajcc  26 grade  (scaled to [0,1] over their range)
//  27-32 subsite one-hot 33 bilateral       34 total_dose (z)
//  35 dose_fraction (z)  36 aspiration_pre
//  37 ic  38 cc  39 nd   40 primary_ic / 3   41 nodal_ic / 3   42-46 dlt after IC
//  47 primary_cc / 3     48 nodal_cc / 3     49-53 dlt after CC
inline constexpr std::size_t kBaseWidth = 37;
inline constexpr std::size_t kContextWidth = 17;
inline constexpr std::size_t kEncodedWidth = kBaseWidth + kContextWidth;

inline constexpr std::size_t kSlotAge = 0;
inline constexpr std::size_t kSlotPackYears = 8;
inline constexpr std::size_t kSlotLymphNodes = 9;
inline constexpr std::size_t kSlotTStage = 23;
inline constexpr std::size_t kSlotNStage = 24;
inline constexpr std::size_t kSlotAjcc = 25;
inline constexpr std::size_t kSlotGrade = 26;
inline constexpr std::size_t kSlotSubsite = 27;
inline constexpr std::size_t kSlotTotalDose = 34;
inline constexpr std::size_t kSlotDoseFraction = 35;
inline constexpr std::size_t kSlotDecisions = 37;
inline constexpr std::size_t kSlotPostIc = 40;
inline constexpr std::size_t kSlotPostCc = 47;

// Transition as fed forward: ordinal responses may be expectations (0..3).
struct TransitionSummary {
  double primary = 1.0;
  double nodal = 1.0;
  std::array<double, kDltTypes> dlt{};

  static TransitionSummary from_state(const TransitionState& s);
  friend bool operator==(const TransitionSummary&, const TransitionSummary&) = default;
};

// Prior decisions and transitions known at a stage. Absent entries encode as 0.
struct StageContext {
  std::array<std::optional<bool>, kStages> decisions{};
  std::optional<TransitionSummary> post_ic;
  std::optional<TransitionSummary> post_cc;
};

// Context visible when deciding `stage`: earlier decisions and transitions.
StageContext stage_context(const CohortRecord& r, Stage stage);
// Every decision and both transitions (input to the outcome models).
StageContext full_context(const CohortRecord& r);

// z-normalization statistics for age, pack_years, total_dose, dose_fraction.
struct NormalizationStats {
  std::array<double, 4> mean{};
  std::array<double, 4> sd{1.0, 1.0, 1.0, 1.0};
};

class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  explicit FeatureEncoder(NormalizationStats stats) : stats_(stats), fitted_(true) {}

  // Statistics from the training split only.
  static FeatureEncoder fit(const Cohort& train);

  bool fitted() const noexcept { return fitted_; }
  const NormalizationStats& stats() const;

  void encode_into(const PatientFeatures& p, const StageContext& ctx, std::span<double> out) const;
  std::vector<double> encode(const PatientFeatures& p, const StageContext& ctx = {}) const;
  // One row per (features, context) pair.
  Tensor encode_rows(const Cohort& cohort, Stage stage) const;
  Tensor encode_rows_full(const Cohort& cohort) const;

 private:
  NormalizationStats stats_;
  bool fitted_ = false;
};

// Named attribution group: a feature and the encoded slots it occupies.
struct FeatureGroup {
  std::string name;
  std::vector<std::size_t> slots;
};
const std::vector<FeatureGroup>& feature_groups();
// Name of each encoded slot.
const std::vector<std::string>& encoded_slot_names();

}  // namespace dtwin
