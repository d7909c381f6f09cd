#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "dtwin/error.hpp"
#include "dtwin/neighbors.hpp"
#include "dtwin/random.hpp"

using namespace dtwin;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor random_points(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  Tensor t = Tensor::matrix(n, d);
  for (double& v : t.data()) v = standard_normal(rng);
  return t;
}

// Exhaustive sort of (distance, id) pairs.
std::vector<std::size_t> brute_knn(std::span<const double> q, const Tensor& pts, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += (pts(i, j) - q[j]) * (pts(i, j) - q[j]);
    all.emplace_back(std::sqrt(s), i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

// Two-pass population std over logits computed via log(p) - log1p(-p).
double caliper_oracle(const std::vector<double>& p, double alpha) {
  std::vector<long double> l;
  for (double v : p) l.push_back(std::log(static_cast<long double>(v)) - std::log1p(-static_cast<long double>(v)));
  long double mean = 0.0L;
  for (auto v : l) mean += v;
  mean /= static_cast<long double>(l.size());
  long double ss = 0.0L;
  for (auto v : l) ss += (v - mean) * (v - mean);
  return static_cast<double>(alpha * std::sqrt(ss / static_cast<long double>(l.size())));
}

double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max({d, static_cast<double>(i + 1) / n - u[i], u[i] - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace

TEST_CASE("knn") {
  SUBCASE("1-D example") {
    const Tensor pts = Tensor::column({0.0, 1.0, 2.0, 10.0});
    const std::vector<double> q = {0.0};
    CHECK(knn(q, pts, 2) == std::vector<std::size_t>{0, 1});
    CHECK(knn(q, pts, 4) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(knn(q, pts, 5), UsageError);
  }
  SUBCASE("ties go to the lower id") {
    const Tensor pts = Tensor::column({1.0, -1.0, 1.0, -1.0});
    const std::vector<double> q = {0.0};
    CHECK(knn(q, pts, 3) == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("matches exhaustive sort") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor pts = random_points(rng, 200, 16);
      const Tensor q = random_points(rng, 1, 16);
      CHECK(knn(q.row_span(0), pts, 25) == brute_knn(q.row_span(0), pts, 25));
    }
  }
  SUBCASE("permutation invariant up to tie-break") {
    std::mt19937_64 rng(4);
    const Tensor pts = random_points(rng, 120, 4);
    const Tensor q = random_points(rng, 1, 4);
    std::vector<std::size_t> perm(pts.rows());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_range(perm.begin(), perm.end(), rng);
    Tensor shuffled = Tensor::matrix(pts.rows(), pts.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (std::size_t j = 0; j < pts.cols(); ++j) shuffled(i, j) = pts(perm[i], j);
    }
    const auto a = knn(q.row_span(0), pts, 30);
    std::set<std::size_t> b;
    for (std::size_t id : knn(q.row_span(0), shuffled, 30)) b.insert(perm[id]);
    CHECK(std::set<std::size_t>(a.begin(), a.end()) == b);
  }
}

TEST_CASE("caliper distance") {
  CHECK(caliper_distance(std::vector<double>(7, 0.5), 0.1) == 0.0);
  CHECK(caliper_distance(std::vector<double>(150, 0.4), 0.1) == 0.0);
  const std::vector<double> p = {sigmoid(1.0), sigmoid(-1.0)};
  CHECK(caliper_distance(p, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(caliper_distance(std::vector<double>{0.3, 1.0}, 0.1), DomainError);
  CHECK_THROWS_AS(caliper_distance(std::vector<double>{0.0, 0.4}, 0.1), DomainError);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> q(500);
    for (double& v : q) v = sigmoid(3.0 * standard_normal(rng));
    const double alpha = 0.05 + uniform01(rng);
    CHECK(std::abs(caliper_distance(q, alpha) - caliper_oracle(q, alpha)) <= 1e-12);
  }
}

TEST_CASE("neighbor config validation") {
  NeighborConfig c;
  CHECK_NOTHROW(c.validate());
  c.n = c.k;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NeighborConfig{};
  c.n = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NeighborConfig{};
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("estimate_ate") {
  SUBCASE("treated all events, untreated none") {
    std::mt19937_64 rng(1);
    const Tensor emb = random_points(rng, 40, 3);
    std::vector<double> prop(40);
    std::vector<int> t(40);
    Tensor y = Tensor::matrix(40, 1);
    for (std::size_t i = 0; i < 40; ++i) {
      prop[i] = sigmoid(0.3 * standard_normal(rng));
      t[i] = static_cast<int>(i % 2);
      y(i, 0) = t[i];
    }
    NeighborConfig c;
    c.k = 30;
    const auto e = estimate_ate(emb.row_span(0), 0.5, emb, prop, t, y, c);
    CHECK(e.difference[0] == 1.0);
    CHECK(e.treated_rate[0] == 1.0);
    CHECK(e.untreated_rate[0] == 0.0);
    CHECK(e.treated_ids.size() >= 5);
    CHECK(e.untreated_ids.size() >= 5);
  }
  SUBCASE("identical propensities keep the whole pool on the first pass") {
    std::mt19937_64 rng(2);
    const Tensor emb = random_points(rng, 150, 2);
    const std::vector<double> prop(150, 0.4);
    std::vector<int> t(150);
    for (std::size_t i = 0; i < 150; ++i) t[i] = bernoulli(rng, 0.5);
    const Tensor y = Tensor::matrix(150, 2, 0.5);
    const auto e = estimate_ate(emb.row_span(3), 0.7, emb, prop, t, y, NeighborConfig{});
    CHECK(e.alpha == NeighborConfig{}.alpha);
    CHECK(e.treated_ids.size() + e.untreated_ids.size() == 100);
  }
  SUBCASE("low support when a group never reaches five") {
    std::mt19937_64 rng(5);
    const Tensor emb = random_points(rng, 50, 2);
    std::vector<double> prop(50);
    std::vector<int> t(50, 0);
    for (std::size_t i = 0; i < 50; ++i) prop[i] = sigmoid(standard_normal(rng));
    t[7] = t[9] = 1;
    NeighborConfig c;
    c.k = 50;
    const auto e = estimate_ate(emb.row_span(0), 0.5, emb, prop, t, Tensor::matrix(50, 1), c);
    CHECK(e.low_support);
    CHECK(e.treated_ids.size() == 2);
    CHECK(e.untreated_ids.size() == 48);
  }
  SUBCASE("known additive effect") {
    std::mt19937_64 rng(11);
    const std::size_t n = 500;
    Tensor emb = random_points(rng, n, 2);
    std::vector<double> prop(n);
    std::vector<int> t(n);
    Tensor y = Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      prop[i] = sigmoid(emb(i, 0));
      t[i] = bernoulli(rng, prop[i]);
      const double base = 0.1 + 0.4 * sigmoid(2.0 * emb(i, 0) + emb(i, 1));
      y(i, 0) = bernoulli(rng, base + 0.3 * t[i]);
    }
    double mean = 0.0;
    for (int q = 0; q < 20; ++q) {
      const Tensor x = random_points(rng, 1, 2);
      const auto e = estimate_ate(x.row_span(0), sigmoid(x(0, 0)), emb, prop, t, y, NeighborConfig{});
      CHECK_FALSE(e.low_support);
      mean += e.difference[0] / 20.0;
    }
    CHECK(std::abs(mean - 0.3) <= 0.1);
  }
  SUBCASE("escalation terminates, is minimal and monotone") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = 20 + uniform_index(rng, 60);
      const Tensor emb = random_points(rng, n, 2);
      std::vector<double> prop(n);
      std::vector<int> t(n);
      const double share = uniform01(rng);
      for (std::size_t i = 0; i < n; ++i) {
        prop[i] = sigmoid(2.0 * standard_normal(rng));
        t[i] = bernoulli(rng, share);
      }
      NeighborConfig c;
      c.k = 11 + uniform_index(rng, n - 11);
      c.alpha = 0.01 + 0.3 * uniform01(rng);
      const double qp = sigmoid(standard_normal(rng));
      const auto e = estimate_ate(emb.row_span(0), qp, emb, prop, t, Tensor::matrix(n, 1), c);
      const std::size_t kept = e.treated_ids.size() + e.untreated_ids.size();
      const bool enough = e.treated_ids.size() >= 5 && e.untreated_ids.size() >= 5;
      CHECK((enough || (kept == c.k && e.low_support)));

      const auto pool = knn(emb.row_span(0), emb, c.k);
      const double spread = caliper_distance(prop, 1.0);
      if (e.alpha > c.alpha + 1e-12) {
        const auto before = caliper_match(pool, logit(qp), prop, t, (e.alpha - c.alpha_step) * spread);
        CHECK_FALSE((before.treated.size() >= 5 && before.untreated.size() >= 5));
        CHECK(before.treated.size() + before.untreated.size() < c.k);
      }
      MatchedGroups prev;
      for (int step = 0; step < 5; ++step) {
        auto m = caliper_match(pool, logit(qp), prop, t, (c.alpha + 0.1 * step) * spread);
        std::sort(m.treated.begin(), m.treated.end());
        std::sort(m.untreated.begin(), m.untreated.end());
        CHECK(std::includes(m.treated.begin(), m.treated.end(), prev.treated.begin(), prev.treated.end()));
        CHECK(std::includes(m.untreated.begin(), m.untreated.end(), prev.untreated.begin(), prev.untreated.end()));
        prev = std::move(m);
      }
    }
  }
  SUBCASE("length mismatch") {
    const Tensor emb = Tensor::matrix(20, 2);
    const std::vector<double> prop(19, 0.5);
    const std::vector<int> t(20, 0);
    CHECK_THROWS_AS(estimate_ate(emb.row_span(0), 0.5, emb, prop, t, Tensor::matrix(20, 1), NeighborConfig{}), ShapeError);
  }
}

TEST_CASE("neighbor treatment rate") {
  SUBCASE("worked examples") {
    const Tensor emb = Tensor::column({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 100, 101});
    std::vector<int> t(12, 1);
    const std::vector<double> q = {0.0};
    CHECK(neighbor_treatment_rate(q, emb, t, NeighborConfig{.k = 11}).rate == 1.0);
    t[0] = t[4] = t[8] = 0;
    const auto r = neighbor_treatment_rate(q, emb, t, NeighborConfig{.k = 11});
    CHECK(r.rate == doctest::Approx(0.7));
    CHECK(r.ids.size() == 10);
  }
  SUBCASE("matches a brute-force recount") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 30 + uniform_index(rng, 200);
      const Tensor emb = random_points(rng, n, 5);
      std::vector<int> t(n);
      for (int& v : t) v = bernoulli(rng, 0.4);
      const Tensor q = random_points(rng, 1, 5);
      const auto r = neighbor_treatment_rate(q.row_span(0), emb, t, NeighborConfig{.k = 20});
      const auto ids = brute_knn(q.row_span(0), emb, 10);
      CHECK(r.ids == ids);
      double count = 0.0;
      for (std::size_t id : ids) count += t[id];
      CHECK(r.rate == count / 10.0);
    }
  }
}

TEST_CASE("Mahalanobis novelty") {
  SUBCASE("cohort mean is distance 0, percentile 0") {
    std::mt19937_64 rng(19);
    const Tensor c = random_points(rng, 300, 4);
    const auto m = MahalanobisModel::fit(c);
    std::vector<double> mu(m.mean().data(), m.mean().data() + 4);
    const auto r = m.rate(mu);
    CHECK(r.distance == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.percentile == 0.0);
    CHECK(r.trusted);
  }
  SUBCASE("identity covariance gives Euclidean distance") {
    std::mt19937_64 rng(23);
    const Tensor c = random_points(rng, 50, 3);
    const MahalanobisModel m(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), c);
    const std::vector<double> x = {3.0, 4.0, 0.0};
    CHECK(m.distance(x) == doctest::Approx(5.0));
  }
  SUBCASE("shrinkage matches the population covariance plus lambda") {
    const Tensor c = Tensor::from_rows({{1, 0}, {-1, 0}, {0, 2}, {0, -2}});
    const auto m = MahalanobisModel::fit(c);
    const double lambda = 1e-3 * (0.5 + 2.0) / 2.0;
    CHECK(m.covariance()(0, 0) == doctest::Approx(0.5 + lambda));
    CHECK(m.covariance()(1, 1) == doctest::Approx(2.0 + lambda));
    CHECK(m.covariance()(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("constant cohort is singular") {
    CHECK_THROWS_AS(MahalanobisModel::fit(Tensor::matrix(10, 3, 1.0)), NumericError);
  }
  SUBCASE("in-distribution queries give uniform percentiles") {
    std::mt19937_64 rng(29);
    const Tensor c = random_points(rng, 1000, 6);
    const auto m = MahalanobisModel::fit(c);
    std::vector<double> u;
    for (int i = 0; i < 1000; ++i) u.push_back(m.rate(random_points(rng, 1, 6).row_span(0)).percentile / 100.0);
    CHECK(ks_uniform(u) < 0.1);
  }
  SUBCASE("percentile monotone in distance and trusted flips at 75") {
    std::vector<double> ref(100);
    std::iota(ref.begin(), ref.end(), 0.0);
    double last = -1.0;
    for (double d = -1.0; d <= 101.0; d += 0.25) {
      const auto r = novelty_from_distance(d, ref);
      CHECK(r.percentile >= last);
      last = r.percentile;
    }
    CHECK(novelty_from_distance(75.0, ref).percentile == 75.0);
    CHECK(novelty_from_distance(75.0, ref).trusted);
    CHECK_FALSE(novelty_from_distance(75.5, ref).trusted);
    CHECK(novelty_from_distance(74.5, ref).trusted);
  }
}
