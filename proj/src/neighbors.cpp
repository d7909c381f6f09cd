#include "dtwin/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtwin/error.hpp"

namespace dtwin {

void NeighborConfig::validate() const {
  if (!(n > 0 && n < k)) throw ConfigError("neighbor config needs 0 < n < k");
  if (!(alpha > 0.0) || !(alpha_step > 0.0)) throw ConfigError("caliper alpha and its step must be > 0");
  if (min_group == 0) throw ConfigError("minimum matched group size must be > 0");
}

std::vector<std::size_t> knn(std::span<const double> query, const Tensor& cohort, std::size_t k) {
  const std::size_t n = cohort.rows();
  if (k > n) throw UsageError("knn: k=" + std::to_string(k) + " exceeds cohort size " + std::to_string(n));
  if (query.size() != cohort.cols()) throw ShapeError("knn: query width differs from cohort embeddings");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = cohort.row_span(i);
    double s = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) s += (row[j] - query[j]) * (row[j] - query[j]);
    d[i] = s;
  }
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  auto closer = [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), closer);
  ids.resize(k);
  return ids;
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("propensity must lie in (0,1) (got " + std::to_string(p) + ")");
  return std::log(p / (1.0 - p));
}

double clamp_propensity(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

double caliper_distance(std::span<const double> propensities, double alpha) {
  if (propensities.empty()) throw UsageError("caliper_distance: no propensities");
  // Shifted by the first logit so identical propensities give exactly 0.
  std::vector<double> l(propensities.size());
  const double shift = logit(propensities[0]);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = logit(propensities[i]) - shift;
  double mean = 0.0;
  for (double v : l) mean += v;
  mean /= static_cast<double>(l.size());
  double ss = 0.0;
  for (double v : l) ss += (v - mean) * (v - mean);
  return alpha * std::sqrt(ss / static_cast<double>(l.size()));
}

MatchedGroups caliper_match(std::span<const std::size_t> pool, double query_logit, std::span<const double> propensities,
                            std::span<const int> treated, double cd) {
  MatchedGroups m;
  for (std::size_t id : pool) {
    if (std::abs(logit(propensities[id]) - query_logit) <= cd) (treated[id] ? m.treated : m.untreated).push_back(id);
  }
  return m;
}

AteEstimate estimate_ate(std::span<const double> query_embedding, double query_propensity, const Tensor& embeddings,
                         std::span<const double> propensities, std::span<const int> treated, const Tensor& outcomes,
                         const NeighborConfig& config) {
  config.validate();
  const std::size_t n = embeddings.rows();
  if (propensities.size() != n || treated.size() != n || outcomes.rows() != n) {
    throw ShapeError("estimate_ate: embeddings, propensities, treatment flags and outcomes differ in length");
  }
  const auto pool = knn(query_embedding, embeddings, std::min(config.k, n));
  const double query_logit = logit(query_propensity);
  const double spread = caliper_distance(propensities, 1.0);
  std::vector<double> gaps;
  for (std::size_t id : pool) gaps.push_back(std::abs(logit(propensities[id]) - query_logit));
  std::sort(gaps.begin(), gaps.end());
  const double widest = gaps.back();

  AteEstimate est;
  double alpha = config.alpha;
  for (;;) {
    // Zero spread cannot widen the caliper, so the whole pool is kept at once.
    const double cd = spread > 0.0 ? alpha * spread : widest;
    auto m = caliper_match(pool, query_logit, propensities, treated, cd);
    est.treated_ids = std::move(m.treated);
    est.untreated_ids = std::move(m.untreated);
    est.alpha = alpha;
    est.caliper = cd;
    if (est.treated_ids.size() >= config.min_group && est.untreated_ids.size() >= config.min_group) break;
    if (est.treated_ids.size() + est.untreated_ids.size() == pool.size()) {
      est.low_support = true;
      break;
    }
    // Skip increments that admit nobody new; the alpha grid is unchanged.
    const double next_gap = *std::upper_bound(gaps.begin(), gaps.end(), cd);
    const double steps = std::ceil((next_gap / spread - alpha) / config.alpha_step);
    alpha += std::max(1.0, steps) * config.alpha_step;
  }
  const std::size_t q = outcomes.cols();
  auto rates = [&](const std::vector<std::size_t>& ids) {
    std::vector<double> r(q, 0.0);
    if (ids.empty()) return std::vector<double>(q, std::nan(""));
    for (std::size_t id : ids) {
      for (std::size_t j = 0; j < q; ++j) r[j] += outcomes(id, j);
    }
    for (double& v : r) v /= static_cast<double>(ids.size());
    return r;
  };
  est.treated_rate = rates(est.treated_ids);
  est.untreated_rate = rates(est.untreated_ids);
  est.difference.resize(q);
  for (std::size_t j = 0; j < q; ++j) est.difference[j] = est.treated_rate[j] - est.untreated_rate[j];
  return est;
}

NeighborRate neighbor_treatment_rate(std::span<const double> query, const Tensor& embeddings,
                                     std::span<const int> treated, const NeighborConfig& config) {
  config.validate();
  if (treated.size() != embeddings.rows()) throw ShapeError("neighbor_treatment_rate: one flag per cohort member");
  NeighborRate r;
  r.ids = knn(query, embeddings, config.n);
  std::size_t yes = 0;
  for (std::size_t id : r.ids) yes += treated[id] != 0;
  r.rate = static_cast<double>(yes) / static_cast<double>(r.ids.size());
  return r;
}

// ------------------------------------------------------------ Mahalanobis

MahalanobisModel::MahalanobisModel(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance, const Tensor& cohort)
    : mean_(std::move(mean)), covariance_(covariance), llt_(covariance) {
  if (llt_.info() != Eigen::Success) throw NumericError("embedding covariance is singular");
  sorted_.reserve(cohort.rows());
  for (std::size_t i = 0; i < cohort.rows(); ++i) sorted_.push_back(distance(cohort.row_span(i)));
  std::sort(sorted_.begin(), sorted_.end());
}

MahalanobisModel MahalanobisModel::fit(const Tensor& cohort) {
  const std::size_t n = cohort.rows(), d = cohort.cols();
  if (n < 2) throw UsageError("Mahalanobis reference needs at least 2 cohort members");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(cohort.data().data(),
                                                                                              static_cast<Eigen::Index>(n),
                                                                                              static_cast<Eigen::Index>(d));
  Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  const double lambda = 1e-3 * cov.trace() / static_cast<double>(d);
  cov.diagonal().array() += lambda;
  return MahalanobisModel(std::move(mean), cov, cohort);
}

double MahalanobisModel::distance(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(mean_.size())) throw ShapeError("Mahalanobis: embedding width mismatch");
  Eigen::VectorXd diff(mean_.size());
  for (Eigen::Index i = 0; i < mean_.size(); ++i) diff[i] = x[static_cast<std::size_t>(i)] - mean_[i];
  return std::sqrt(std::max(0.0, diff.dot(llt_.solve(diff))));
}

NoveltyRating novelty_from_distance(double distance, const std::vector<double>& sorted_reference) {
  if (sorted_reference.empty()) throw UsageError("novelty: empty reference cohort");
  NoveltyRating r;
  r.distance = distance;
  const auto below = std::lower_bound(sorted_reference.begin(), sorted_reference.end(), distance) - sorted_reference.begin();
  r.percentile = 100.0 * static_cast<double>(below) / static_cast<double>(sorted_reference.size());
  r.trusted = r.percentile <= kTrustedPercentile;
  return r;
}

NoveltyRating MahalanobisModel::rate(std::span<const double> x) const { return novelty_from_distance(distance(x), sorted_); }

}  // namespace dtwin
