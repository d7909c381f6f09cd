#pragma once

#include <span>
#include <vector>

namespace dtwin {

// Mixture of log-normal time-to-event distributions (times in months).
struct LogNormalMixture {
  std::vector<double> weights;  // sum to 1
  std::vector<double> mu;       // log-months
  std::vector<double> sigma;    // > 0

  std::size_t components() const { return weights.size(); }
  // S(t) = sum_k w_k (1 - Phi((ln t - mu_k) / sigma_k)); t must be > 0.
  double survival(double t) const;
  double log_density(double t) const;
  double log_survival(double t) const;
  // Censored log-likelihood of one observation.
  double log_likelihood(double t, bool event) const;
  // Time at which S(t) = 0.5.
  double median() const;
};

// S on a strictly increasing grid of positive times.
std::vector<double> survival_curve(const LogNormalMixture& m, std::span<const double> grid);

// 0, 1, ..., 60 months.
const std::vector<double>& serving_time_grid();

// S on the serving grid, with S(0) = 1.
std::vector<double> serving_curve(const LogNormalMixture& m);

// Kaplan-Meier S on `grid` (non-decreasing). Events at time t count before
// censorings at t; S is right-continuous. Empty input gives NaN.
std::vector<double> kaplan_meier(std::span<const double> times, std::span<const int> events,
                                 std::span<const double> grid);

}  // namespace dtwin
