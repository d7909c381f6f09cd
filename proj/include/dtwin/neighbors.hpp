#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dtwin/tensor.hpp"

namespace dtwin {

struct NeighborConfig {
  std::size_t k = 100;  // neighbor pool for matching
  std::size_t n = 10;   // displayed subset / treatment rate
  double alpha = 0.1;
  double alpha_step = 0.1;
  std::size_t min_group = 5;

  void validate() const;
};

// Ids of the k rows of `cohort` nearest to `query` (Euclidean), ascending by
// distance, ties by id.
std::vector<std::size_t> knn(std::span<const double> query, const Tensor& cohort, std::size_t k);

double logit(double p);

// Into [1e-12, 1 - 1e-12] so that saturated sigmoid outputs keep a finite logit.
double clamp_propensity(double p);

// alpha * population standard deviation of logit(p) over the cohort.
double caliper_distance(std::span<const double> propensities, double alpha);

struct MatchedGroups {
  std::vector<std::size_t> treated;
  std::vector<std::size_t> untreated;
};

// Members of `pool` whose |logit(p) - query_logit| <= cd, split by treatment.
MatchedGroups caliper_match(std::span<const std::size_t> pool, double query_logit, std::span<const double> propensities,
                            std::span<const int> treated, double cd);

struct AteEstimate {
  std::vector<double> treated_rate;  // one per outcome column
  std::vector<double> untreated_rate;
  std::vector<double> difference;  // treated - untreated
  double alpha = 0.0;              // final caliper fraction
  double caliper = 0.0;
  std::vector<std::size_t> treated_ids;
  std::vector<std::size_t> untreated_ids;
  bool low_support = false;  // a group stayed below min_group with all k kept
};

// Propensity-caliper matching among the k nearest neighbors. Alpha grows by
// alpha_step until both groups reach min_group or every neighbor is kept.
// outcomes: [cohort, q] values in [0,1].
AteEstimate estimate_ate(std::span<const double> query_embedding, double query_propensity, const Tensor& embeddings,
                         std::span<const double> propensities, std::span<const int> treated, const Tensor& outcomes,
                         const NeighborConfig& config);

struct NeighborRate {
  double rate = 0.0;
  std::vector<std::size_t> ids;
};

// Fraction of the n nearest neighbors that received treatment.
NeighborRate neighbor_treatment_rate(std::span<const double> query, const Tensor& embeddings,
                                     std::span<const int> treated, const NeighborConfig& config);

struct NoveltyRating {
  double distance = 0.0;
  double percentile = 0.0;  // [0,100]
  bool trusted = true;      // percentile <= 75
};

inline constexpr double kTrustedPercentile = 75.0;

class MahalanobisModel {
 public:
  MahalanobisModel() = default;
  // Covariance used as given; reference distances from `cohort`.
  MahalanobisModel(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance, const Tensor& cohort);
  // Mean and population covariance of the cohort, shrunk by
  // lambda = 1e-3 trace(Sigma) / d.
  static MahalanobisModel fit(const Tensor& cohort);

  double distance(std::span<const double> x) const;
  NoveltyRating rate(std::span<const double> x) const;
  const std::vector<double>& reference_distances() const noexcept { return sorted_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& covariance() const noexcept { return covariance_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  std::vector<double> sorted_;
};

// Percentile = 100 * (# reference distances strictly smaller) / size.
NoveltyRating novelty_from_distance(double distance, const std::vector<double>& sorted_reference);

}  // namespace dtwin
