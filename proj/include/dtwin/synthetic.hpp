#pragma once

#include <array>
#include <cstdint>

#include "dtwin/cohort.hpp"

namespace dtwin {

inline constexpr std::size_t kDefaultCohortSize = 536;
inline constexpr std::size_t kMinSyntheticCohortSize = 2 * kSequences;

// Reference patient counts per treatment sequence, indexed by
// TreatmentSequence::index() (ic*4 + cc*2 + nd).
const std::array<double, kSequences>& reference_sequence_counts();

// Calibrated synthetic cohort.
//
// Each record first draws its treatment sequence (two per sequence are
// guaranteed, the rest multinomial on the reference counts), then its
// pre-treatment features from that sequence's marginal rates. Transitions
// follow the per-sequence response and toxicity rates, tilted by stage:
// higher T (N) stage shifts primary (nodal) response toward progression.
//
// Outcomes hang off a latent risk score
//   r = 0.45(t-2.4) + 0.35(n-1.3) + 0.6[hpv-] + 0.3[hpv?] + 0.25[current smoker]
//       + 0.015(age-59) + 0.01(pack_years-17)
// For endpoint e the log event time is normal with sd 0.9 and mean
//   mu_{s,e} - b_e r + 0.4[complete primary response after CC] (OS, LRC)
// where mu_{s,e} reproduces the sequence's event rate at 72 months. Times
// are censored administratively at U[48, 96] months. Feeding tube and
// post-treatment aspiration are logistic in the sequence rate plus 0.5 r
// and any DLT after CC.
Cohort generate_synthetic_cohort(std::uint64_t seed, std::size_t n = kDefaultCohortSize);

}  // namespace dtwin
