#include <doctest.h>

#include <cmath>
#include <random>

#include "dtwin/error.hpp"
#include "dtwin/evaluation.hpp"
#include "dtwin/random.hpp"
#include "support/oracles.hpp"

using namespace dtwin;
using dtwin::testing::pairwise_auc;

TEST_CASE("binary metrics") {
  SUBCASE("perfect ranking") {
    const std::vector<double> s = {0.9, 0.1};
    const std::vector<int> y = {1, 0};
    const auto m = binary_metrics(s, y);
    REQUIRE(m.auc.has_value());
    CHECK(*m.auc == 1.0);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 1.0);
  }
  SUBCASE("all scores tied") {
    const std::vector<double> s(10, 0.3);
    const std::vector<int> y = {1, 0, 1, 0, 0, 0, 1, 1, 0, 1};
    CHECK(*roc_auc(s, y) == 0.5);
  }
  SUBCASE("single class keeps accuracy and F1") {
    const std::vector<double> s = {0.7, 0.2, 0.6};
    const std::vector<int> y = {1, 1, 1};
    const auto m = binary_metrics(s, y);
    CHECK_FALSE(m.auc.has_value());
    CHECK(m.accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(m.f1 == doctest::Approx(0.8));
  }
  SUBCASE("rank statistic matches the pairwise oracle") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> s(50);
      std::vector<int> y(50);
      for (int i = 0; i < 50; ++i) {
        // Coarse scores so ties are common.
        s[i] = std::round(uniform01(rng) * 10.0) / 10.0;
        y[i] = bernoulli(rng, 0.4) ? 1 : 0;
      }
      y[0] = 1;
      y[1] = 0;
      CHECK(*roc_auc(s, y) == doctest::Approx(pairwise_auc(s, y)).epsilon(1e-12));
    }
  }
  SUBCASE("invariant under strictly monotone transforms") {
    std::mt19937_64 rng(22);
    std::vector<double> s(60), t(60);
    std::vector<int> y(60);
    for (int i = 0; i < 60; ++i) {
      s[i] = standard_normal(rng);
      t[i] = std::exp(3.0 * s[i]) + 7.0;
      y[i] = (i % 3 == 0) ? 1 : 0;
    }
    CHECK(*roc_auc(s, y) == *roc_auc(t, y));
  }
  SUBCASE("accuracy and F1 match a brute-force confusion matrix") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> s(40);
      std::vector<int> y(40);
      for (int i = 0; i < 40; ++i) {
        s[i] = uniform01(rng);
        y[i] = bernoulli(rng, 0.5);
      }
      int tp = 0, tn = 0, fp = 0, fn = 0;
      for (int i = 0; i < 40; ++i) {
        const int p = s[i] >= 0.5;
        if (p && y[i]) ++tp;
        if (!p && !y[i]) ++tn;
        if (p && !y[i]) ++fp;
        if (!p && y[i]) ++fn;
      }
      const double precision = tp + fp ? double(tp) / (tp + fp) : 0.0;
      const double recall = tp + fn ? double(tp) / (tp + fn) : 0.0;
      const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
      const auto m = binary_metrics(s, y);
      CHECK(m.accuracy == doctest::Approx(double(tp + tn) / 40.0));
      CHECK(m.f1 == doctest::Approx(f1));
    }
  }
}

TEST_CASE("multiclass AUC") {
  SUBCASE("perfect separation") {
    const Tensor s = Tensor::from_rows({{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}, {0.7, 0.2, 0.1}});
    const std::vector<std::size_t> y = {0, 1, 2, 0};
    const auto m = multiclass_auc(s, y);
    CHECK(m.micro == 1.0);
    CHECK(m.weighted == 1.0);
  }
  SUBCASE("uniform scores") {
    const Tensor s = Tensor::matrix(6, 3, 1.0 / 3.0);
    const std::vector<std::size_t> y = {0, 1, 2, 0, 1, 2};
    const auto m = multiclass_auc(s, y);
    CHECK(m.micro == 0.5);
    CHECK(m.weighted == 0.5);
  }
  SUBCASE("direct per-class oracle with an absent class") {
    std::mt19937_64 rng(24);
    const std::size_t n = 30, k = 4;
    Tensor s = Tensor::matrix(n, k);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = uniform_index(rng, 3);  // class 3 never occurs
      for (std::size_t c = 0; c < k; ++c) s(i, c) = uniform01(rng);
    }
    double weighted = 0.0;
    std::vector<double> fs;
    std::vector<int> fy;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sc;
      std::vector<int> yc;
      for (std::size_t i = 0; i < n; ++i) {
        sc.push_back(s(i, c));
        yc.push_back(y[i] == c);
        fs.push_back(s(i, c));
        fy.push_back(y[i] == c);
      }
      const double prevalence = std::count(yc.begin(), yc.end(), 1) / double(n);
      if (prevalence > 0) weighted += prevalence * pairwise_auc(sc, yc);
    }
    const auto m = multiclass_auc(s, y);
    CHECK(m.weighted == doctest::Approx(weighted).epsilon(1e-12));
    CHECK(m.micro == doctest::Approx(pairwise_auc(fs, fy)).epsilon(1e-12));
    REQUIRE(m.absent_classes.size() == 1);
    CHECK(m.absent_classes[0] == 3);
  }
  SUBCASE("one class is not enough") {
    const Tensor s = Tensor::matrix(3, 2, 0.5);
    const std::vector<std::size_t> y = {1, 1, 1};
    CHECK_THROWS_AS(multiclass_auc(s, y), UsageError);
  }
}

TEST_CASE("horizon metrics") {
  SUBCASE("labels from event times") {
    const std::vector<EndpointOutcome> o = {{true, 6.0}, {true, 30.0}};
    const std::vector<double> s = {0.2, 0.9};
    const auto m = horizon_metrics(s, o, 12.0);
    CHECK(m.evaluated == 2);
    CHECK(*m.auc == 1.0);
    CHECK(m.f1 == 1.0);
  }
  SUBCASE("censored before the horizon is excluded") {
    const std::vector<EndpointOutcome> o = {{false, 10.0}, {true, 6.0}, {false, 40.0}};
    const std::vector<double> s = {0.5, 0.1, 0.8};
    const auto m = horizon_metrics(s, o, 12.0);
    CHECK(m.excluded == 1);
    CHECK(m.evaluated == 2);
  }
  SUBCASE("no evaluable records") {
    const std::vector<EndpointOutcome> o = {{false, 3.0}};
    const std::vector<double> s = {0.5};
    CHECK_THROWS_AS(horizon_metrics(s, o, 12.0), UsageError);
    CHECK_THROWS_AS(horizon_metrics(s, o, 0.0), DomainError);
  }
  SUBCASE("separable risk") {
    // Each patient's median is exp(mu); events follow that risk exactly.
    std::mt19937_64 rng(25);
    std::vector<LogNormalMixture> curves;
    std::vector<EndpointOutcome> o;
    for (int i = 0; i < 300; ++i) {
      const double risk = uniform01(rng);
      const double mu = std::log(60.0) - 2.5 * risk;
      curves.push_back({{1.0}, {mu}, {0.3}});
      const double t = std::exp(mu + 0.3 * standard_normal(rng));
      o.push_back({t <= 96.0, std::min(t, 96.0)});
    }
    for (double h : kReportHorizons) {
      const auto m = horizon_metrics(std::span<const LogNormalMixture>(curves), o, h);
      INFO("horizon " << h);
      CHECK(*m.auc >= 0.9);
    }
  }
}

TEST_CASE("metric report") {
  MetricReport r;
  r.add_binary("static", "feeding_tube", BinaryMetrics{0.7, 0.8, 0.5, 10});
  r.add("dsm", "os@12", "auc", std::nullopt);
  CHECK(r.find("static", "feeding_tube", "auc")->value == 0.7);
  CHECK(r.to_json()["dsm"]["os@12"]["auc"].is_null());
  CHECK(r.to_text().find("n/a") != std::string::npos);
}
