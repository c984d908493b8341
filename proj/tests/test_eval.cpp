#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/eval/evaluate.hpp"
#include "patchguard/eval/metrics.hpp"
#include "support/metric_oracles.hpp"

using namespace patchguard;
using namespace patchguard::eval;

using testing::direct_f1;
using testing::exhaustive_f1;
using testing::Labels;
using testing::pairwise_auroc;
using testing::random_instance;

TEST_CASE("pixel_auroc examples") {
  CHECK(pixel_auroc(std::vector<float>{0.1f, 0.4f, 0.35f, 0.8f}, Labels{0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK(pixel_auroc(std::vector<float>{0.1f, 0.2f, 0.3f}, Labels{0, 0, 1}) == 1.0);
  CHECK(pixel_auroc(std::vector<float>{0.5f, 0.5f, 0.5f, 0.5f}, Labels{0, 1, 0, 1}) == 0.5);
  CHECK(pixel_auroc(std::vector<float>{0.9f, 0.1f}, Labels{0, 1}) == 0.0);
  CHECK_THROWS_AS(pixel_auroc(std::vector<float>{0.1f, 0.2f}, Labels{0, 0}), Undefined);
  CHECK_THROWS_AS(pixel_auroc(std::vector<float>{0.1f, 0.2f}, Labels{1, 1}), Undefined);
  CHECK_THROWS_AS(pixel_auroc(std::vector<float>{0.1f}, Labels{1, 0}), DimensionMismatch);
}

TEST_CASE("pixel_auroc matches the pairwise oracle") {
  Rng rng(RandomSeed{101});
  std::vector<float> s;
  Labels y;
  for (int i = 0; i < 200; ++i) {
    random_instance(rng, static_cast<std::size_t>(rng.uniform_int(2, 500)), s, y);
    REQUIRE(std::abs(pixel_auroc(s, y) - pairwise_auroc(s, y)) < 1e-12);
  }
}

TEST_CASE("pixel_auroc is rank-invariant and complements under negation") {
  Rng rng(RandomSeed{7});
  std::vector<float> s;
  Labels y;
  for (int i = 0; i < 50; ++i) {
    random_instance(rng, 300, s, y, 0.0f);  // grid values only, so float exp keeps them distinct
    const double a = pixel_auroc(s, y);
    std::vector<float> e(s.size()), aff(s.size()), neg(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      e[k] = std::exp(3.0f * s[k]);
      aff[k] = 4.0f * s[k] - 1.0f;
      neg[k] = -s[k];
    }
    CHECK(std::abs(pixel_auroc(e, y) - a) < 1e-9);
    CHECK(std::abs(pixel_auroc(aff, y) - a) < 1e-9);
    CHECK(std::abs(pixel_auroc(neg, y) + a - 1.0) < 1e-9);
  }
}

TEST_CASE("merged accumulators equal the pooled one") {
  Rng rng(RandomSeed{9});
  std::vector<float> s;
  Labels y;
  random_instance(rng, 400, s, y);
  ScoreAccumulator all, a, b;
  all.add(s, y);
  a.add(std::span(s).first(150), std::span(y).first(150));
  b.add(std::span(s).subspan(150), std::span(y).subspan(150));
  b.merge(a);
  CHECK(b.auroc() == all.auroc());
  CHECK(b.positives() == all.positives());
  CHECK(b.negatives() == all.negatives());
  CHECK(b.groups().size() == all.groups().size());
}

TEST_CASE("select_threshold examples") {
  auto r = select_threshold(std::vector<float>{0.1f, 0.4f, 0.35f, 0.8f}, Labels{0, 0, 1, 1});
  CHECK(r.f1 == doctest::Approx(0.8));
  CHECK(r.threshold == 0.35f);

  r = select_threshold(std::vector<float>{0.2f, 0.9f}, Labels{0, 1});
  CHECK(r.f1 == 1.0);
  CHECK(r.threshold == 0.9f);  // ties go to the larger threshold

  r = select_threshold(std::vector<float>{0.3f, 0.6f}, Labels{1, 1});
  CHECK(r.threshold == 0.0f);
  CHECK(r.f1 == 1.0);
  CHECK_THROWS_AS(select_threshold(std::vector<float>{0.3f, 0.6f}, Labels{0, 0}), Undefined);
}

TEST_CASE("select_threshold matches the exhaustive sweep") {
  Rng rng(RandomSeed{55});
  std::vector<float> s;
  Labels y;
  for (int i = 0; i < 100; ++i) {
    random_instance(rng, static_cast<std::size_t>(rng.uniform_int(2, 1000)), s, y);
    const auto r = select_threshold(s, y);
    REQUIRE(r.f1 == doctest::Approx(exhaustive_f1(s, y)).epsilon(1e-12));
    REQUIRE(direct_f1(s, y, r.threshold) == doctest::Approx(r.f1).epsilon(1e-12));
  }
}

TEST_CASE("quantile sweep on large pools stays near the exact optimum") {
  Rng rng(RandomSeed{56});
  const std::size_t n = 200000;
  std::vector<float> s(n);
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.uniform() < 0.02 ? 1 : 0;
    s[i] = static_cast<float>(rng.normal(y[i] ? 2.0 : 0.0, 1.0));
  }
  const auto r = select_threshold(s, y);
  CHECK(direct_f1(s, y, r.threshold) == doctest::Approx(r.f1).epsilon(1e-9));
  // Exact optimum over a fine grid of the score range.
  double best = 0.0;
  for (float t = -1.0f; t < 5.0f; t += 0.01f) best = std::max(best, direct_f1(s, y, t));
  CHECK(r.f1 <= best + 1e-3);
  CHECK(r.f1 >= best - 0.01);
}

TEST_CASE("f1_at agrees with direct counting") {
  Rng rng(RandomSeed{3});
  std::vector<float> s;
  Labels y;
  random_instance(rng, 200, s, y);
  ScoreAccumulator acc;
  acc.add(s, y);
  for (float t : {0.0f, 0.25f, 0.5f, 0.75f, 1.2f}) CHECK(f1_at(acc, t) == doctest::Approx(direct_f1(s, y, t)));
}

TEST_CASE("evaluate pools test pixels and thresholds on val") {
  auto img = [](const std::string& id, std::vector<float> v, Labels g) {
    ScoredImage si;
    si.id = id;
    si.map = ScoreMap(1, v.size());
    si.gt = BinaryMask(1, g.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      si.map.at(0, i) = v[i];
      si.gt.set(0, i, g[i] != 0);
    }
    return si;
  };
  std::vector<ScoredImage> val{img("v0", {0.1f, 0.6f, 0.7f}, {0, 1, 1})};
  std::vector<ScoredImage> test{img("t0", {0.1f, 0.4f}, {0, 0}), img("t1", {0.35f, 0.8f}, {1, 1})};
  const auto r = evaluate(val, test);
  CHECK(r.p_auroc == doctest::Approx(0.75));
  CHECK(r.threshold_split == "val");
  CHECK(r.best_threshold == 0.6f);
  CHECK(r.best_f1 == 1.0);  // reported on the split the threshold was chosen on
  REQUIRE(r.per_image.size() == 2);
  CHECK_FALSE(r.per_image[0].p_auroc.has_value());

  std::vector<ScoredImage> clean_val{img("v0", {0.1f}, {0})};
  CHECK(evaluate(clean_val, test).threshold_split == "test");
  CHECK_THROWS_AS(evaluate(val, {img("t0", {0.1f}, {0})}), Undefined);
}
