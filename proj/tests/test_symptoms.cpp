#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dtwin/error.hpp"
#include "dtwin/random.hpp"
#include "dtwin/symptoms.hpp"

using namespace dtwin;

namespace {

const SymptomCohort& shared_cohort() {
  static const SymptomCohort c = generate_symptom_cohort(31);
  return c;
}

SymptomConfig quick_config() {
  SymptomConfig c;
  c.train.max_epochs = 4;
  return c;
}

// Every rating of symptom s at every timepoint = level[s] + t.
SymptomCohort constant_cohort(std::size_t n, const std::array<double, kSymptoms>& level) {
  SymptomCohort c = generate_symptom_cohort(5, n);
  for (auto& r : c) {
    for (std::size_t s = 0; s < kSymptoms; ++s) {
      for (std::size_t t = 0; t < kSymptomTimepoints; ++t) {
        r.ratings[rating_index(s, t)] = std::min(kMaxRating, level[s] + static_cast<double>(t));
      }
    }
  }
  return c;
}

}  // namespace

TEST_CASE("symptom cohort generator and CSV") {
  const auto& c = shared_cohort();
  REQUIRE(c.size() == kSymptomCohortSize);
  std::size_t missing = 0;
  for (const auto& r : c) {
    for (double v : r.ratings) {
      if (rating_missing(v)) {
        ++missing;
      } else {
        CHECK(v >= 0.0);
        CHECK(v <= kMaxRating);
      }
    }
  }
  const double share = static_cast<double>(missing) / static_cast<double>(c.size() * kSymptomOutputs);
  CHECK(share > 0.05);
  CHECK(share < 0.2);
  const auto again = generate_symptom_cohort(31);
  CHECK(format_symptom_csv(again) == format_symptom_csv(c));

  SUBCASE("round trip keeps missing cells") {
    const SymptomCohort head(c.begin(), c.begin() + 50);
    const auto back = parse_symptom_csv(format_symptom_csv(head));
    REQUIRE(back.size() == head.size());
    for (std::size_t i = 0; i < head.size(); ++i) {
      CHECK(back[i].features == head[i].features);
      for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
        CHECK(rating_missing(back[i].ratings[k]) == rating_missing(head[i].ratings[k]));
        if (!rating_missing(head[i].ratings[k])) CHECK(back[i].ratings[k] == head[i].ratings[k]);
      }
    }
  }
  SUBCASE("out-of-range rating names its column") {
    SymptomCohort one(c.begin(), c.begin() + 1);
    one[0].ratings[rating_index(3, 2)] = 11.0;
    try {
      parse_symptom_csv(format_symptom_csv(one));
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      REQUIRE(e.diagnostics().size() == 1);
      CHECK(e.diagnostics()[0].field == "pain_w12");
    }
  }
  SUBCASE("missing column") {
    std::string text = format_symptom_csv(SymptomCohort(c.begin(), c.begin() + 2));
    text.replace(text.find("sleep_w27"), 9, "sleep_w28");
    CHECK_THROWS_AS(parse_symptom_csv(text), ValidationError);
  }
}

TEST_CASE("symptom encoder") {
  SymptomFeatures f;
  f.race = Race::Hispanic;
  f.hpv = Hpv::Unknown;
  f.subsite = Subsite::PharyngealWall;
  f.t_stage = 4;
  f.n_stage = 3;
  f.cc = true;
  const SymptomEncoder enc({10.0, 70.0, 2.0}, {5.0, 2.0, 0.5});
  f.pack_years = 20.0;
  f.total_dose = 66.0;
  f.dose_fraction = 2.2;
  const auto x = enc.encode(f);
  REQUIRE(x.size() == kSymptomEncodedWidth);
  const std::vector<double> want = {1, 0, 1, 0, 0, 1, 2.0, 1, 1, 0, 0, 0, 0, 1, 0, 0, -2.0, 0.4, 0, 1};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(x[i] == doctest::Approx(want[i]));
}

TEST_CASE("symptom model fit") {
  SUBCASE("learns a generative sigmoid-linear oracle") {
    std::mt19937_64 rng(41);
    SymptomCohort c = generate_symptom_cohort(43);
    const SymptomEncoder enc = SymptomEncoder::fit(c);
    std::vector<std::array<double, kSymptomEncodedWidth>> w(kSymptomOutputs);
    std::array<double, kSymptomOutputs> b{};
    for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
      for (double& v : w[k]) v = 0.6 * standard_normal(rng);
      b[k] = 0.5 * standard_normal(rng);
    }
    for (auto& r : c) {
      const auto x = enc.encode(r.features);
      for (std::size_t k = 0; k < kSymptomOutputs; ++k) {
        double z = b[k];
        for (std::size_t j = 0; j < kSymptomEncodedWidth; ++j) z += w[k][j] * x[j];
        r.ratings[k] = kMaxRating / (1.0 + std::exp(-z));
      }
    }
    TrainHistory h;
    const auto m = SymptomModel::fit(c, 3, {}, &h);
    SymptomCohort held;
    for (std::size_t i : h.val_rows) held.push_back(c[i]);
    const double mse = masked_mse(m.predict(m.encoder().encode_rows(held)), held);
    MESSAGE("held-out MSE " << mse);
    CHECK(mse <= 1.0);
  }
  SUBCASE("predictions stay in [0,10]") {
    const auto m = SymptomModel::fit(shared_cohort(), 1, quick_config());
    SymptomFeatures f;
    f.pack_years = 1e4;
    f.total_dose = 1e3;
    for (double v : m.predict(f)) {
      CHECK(v >= 0.0);
      CHECK(v <= kMaxRating);
    }
  }
  SUBCASE("same seed gives identical embeddings") {
    const auto a = SymptomModel::fit(shared_cohort(), 9, quick_config());
    const auto b = SymptomModel::fit(shared_cohort(), 9, quick_config());
    CHECK(std::ranges::equal(a.embeddings().data(), b.embeddings().data()));
    CHECK(a.embeddings().cols() == 10);
    const SymptomModel rebound(a.encoder(), a.params(), a.cohort());
    CHECK(std::ranges::equal(rebound.embeddings().data(), a.embeddings().data()));
  }
  SUBCASE("a column with no ratings is named") {
    SymptomCohort c(shared_cohort().begin(), shared_cohort().begin() + 100);
    for (auto& r : c) r.ratings[rating_index(2, 2)] = std::nan("");
    CHECK_THROWS_WITH_AS(SymptomModel::fit(c, 1, quick_config()), doctest::Contains("taste_w12"), ConfigError);
  }
  SUBCASE("missing ratings carry no loss") {
    SymptomCohort c(shared_cohort().begin(), shared_cohort().begin() + 20);
    Tensor pred = Tensor::matrix(20, kSymptomOutputs, 5.0);
    for (auto& r : c) {
      r.ratings.fill(std::nan(""));
      r.ratings[0] = 7.0;
    }
    CHECK(masked_mse(pred, c) == doctest::Approx(4.0));
  }
  SUBCASE("untrained model") {
    CHECK_THROWS_AS(SymptomModel().predict(SymptomFeatures{}), UsageError);
  }
}

TEST_CASE("symptom trajectories") {
  const auto m = SymptomModel::fit(shared_cohort(), 2, quick_config());
  const auto& cohort = m.cohort();
  SymptomFeatures q = cohort[17].features;
  q.pack_years += 3.0;

  SUBCASE("neighbors match a brute-force search per group") {
    for (Stage st : {Stage::IC, Stage::CC}) {
      const auto p = predict_trajectories(m, q, st);
      const Tensor e = m.embed(Tensor::row(m.encoder().encode(q)));
      for (bool treated : {true, false}) {
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
          const bool flag = st == Stage::IC ? cohort[i].features.ic : cohort[i].features.cc;
          if (flag != treated) continue;
          double s = 0.0;
          for (std::size_t j = 0; j < e.cols(); ++j) {
            s += (m.embeddings()(i, j) - e(0, j)) * (m.embeddings()(i, j) - e(0, j));
          }
          d.emplace_back(s, i);
        }
        std::sort(d.begin(), d.end());
        std::vector<std::size_t> want;
        for (std::size_t i = 0; i < 10; ++i) want.push_back(d[i].second);
        CHECK((treated ? p.treated_ids : p.untreated_ids) == want);
      }
      CHECK_FALSE(p.low_support);
    }
  }
  SUBCASE("medians sit inside the group envelope and ignore missing values") {
    const auto p = predict_trajectories(m, q, Stage::CC);
    REQUIRE(p.symptoms.size() == kSymptoms);
    for (const auto& s : p.symptoms) {
      CHECK(s.treated.size() == 10);
      for (std::size_t t = 0; t < kSymptomTimepoints; ++t) {
        double lo = 1e9, hi = -1e9;
        for (const auto& row : s.treated) {
          if (rating_missing(row[t])) continue;
          lo = std::min(lo, row[t]);
          hi = std::max(hi, row[t]);
        }
        if (lo > hi) {
          CHECK(rating_missing(s.treated_median[t]));
        } else {
          CHECK(s.treated_median[t] >= lo);
          CHECK(s.treated_median[t] <= hi);
        }
      }
    }
  }
  SUBCASE("ND is not in the symptom cohort") {
    CHECK_THROWS_AS(predict_trajectories(m, q, Stage::ND), UsageError);
  }
  SUBCASE("median helper") {
    CHECK(median_present({3.0, std::nan(""), 1.0, 2.0}) == 2.0);
    CHECK(median_present({4.0, 1.0}) == 2.5);
    CHECK(std::isnan(median_present({std::nan("")})));
  }
}

TEST_CASE("symptom ordering and identical groups") {
  std::array<double, kSymptoms> level{};
  level[0] = 0.0;  // final 3
  level[1] = 5.0;  // final 8
  const auto c = constant_cohort(60, level);
  const auto m = SymptomModel::fit(c, 4, quick_config());
  const auto p = predict_trajectories(m, c[0].features, Stage::CC);
  CHECK(p.symptoms[0].name == "swallow");
  CHECK(p.symptoms[0].treated_median[3] == 8.0);
  const auto pos0 = std::find_if(p.symptoms.begin(), p.symptoms.end(), [](const auto& s) { return s.symptom == 0; });
  REQUIRE(pos0 != p.symptoms.end());
  CHECK(pos0 - p.symptoms.begin() == 1);
  for (std::size_t t = 0; t < kSymptomTimepoints; ++t) {
    CHECK(pos0->treated_median[t] == static_cast<double>(t));
    CHECK(pos0->untreated_median[t] == static_cast<double>(t));
  }

  SUBCASE("small groups are flagged") {
    SymptomCohort few = c;
    std::size_t kept = 0;
    for (auto& r : few) {
      if (r.features.ic && ++kept > 3) r.features.ic = false;
    }
    const auto m2 = SymptomModel::fit(few, 4, quick_config());
    const auto p2 = predict_trajectories(m2, few[0].features, Stage::IC);
    CHECK(p2.low_support);
    CHECK(p2.treated_ids.size() == std::min<std::size_t>(kept, 3));
    CHECK(p2.untreated_ids.size() == 10);
  }
}
