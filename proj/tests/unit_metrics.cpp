#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "scan2num/metrics.hpp"
#include "scan2num/rng.hpp"

using namespace scan2num;

namespace {

// O(n^2) fractional ranks, written the slow obvious way
std::vector<double> ranks_by_counting(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    int less = 0, equal = 0;
    for (size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1) / 2.0;
  }
  return r;
}

double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// AUC as the tie-corrected share of correctly ordered positive/negative pairs
double auc_by_pairs(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("average ranks handle ties by averaging") {
  const std::vector<double> plain = {10, 20, 30};
  CHECK(average_ranks(plain) == std::vector<double>{1, 2, 3});
  const std::vector<double> tied = {5, 7, 5, 9};
  CHECK(average_ranks(tied) == std::vector<double>{1.5, 3, 1.5, 4});
  const std::vector<double> all_same = {4, 4, 4, 4, 4};
  CHECK(average_ranks(all_same) == std::vector<double>{3, 3, 3, 3, 3});

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(40);
    for (auto& e : v) e = static_cast<double>(rng.below(12));  // integer values force ties
    const auto fast = average_ranks(v);
    const auto slow = ranks_by_counting(v);
    for (size_t i = 0; i < v.size(); ++i) CHECK(fast[i] == Catch::Approx(slow[i]).margin(1e-12));
  }
}

TEST_CASE("pearson on exact and degenerate inputs") {
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> y = {2, 4, 6, 8};
  CHECK(*pearson(x, y) == Catch::Approx(1.0).margin(1e-15));
  const std::vector<double> neg = {8, 6, 4, 2};
  CHECK(*pearson(x, neg) == Catch::Approx(-1.0).margin(1e-15));
  const std::vector<double> flat = {5, 5, 5, 5};
  CHECK_FALSE(pearson(x, flat).has_value());
  CHECK_FALSE(pearson(flat, y).has_value());
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), DataError);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), DataError);

  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(30), b(30);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.normal();
      b[i] = 0.6 * a[i] + rng.normal();
    }
    CHECK(*pearson(a, b) == Catch::Approx(pearson_direct(a, b)).margin(1e-12));
  }
}

TEST_CASE("spearman matches the rank definition") {
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> y = {1, 3, 2, 4};
  CHECK(*spearman(x, y) == Catch::Approx(0.8).margin(1e-15));

  // any monotone transform leaves it at 1
  const std::vector<double> cube = {1, 8, 27, 64};
  CHECK(*spearman(x, cube) == Catch::Approx(1.0).margin(1e-15));
  const std::vector<double> rev = {4, 3, 2, 1};
  CHECK(*spearman(x, rev) == Catch::Approx(-1.0).margin(1e-15));

  const std::vector<double> flat = {2, 2, 2, 2};
  CHECK_FALSE(spearman(x, flat).has_value());
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{3, 4}), DataError);
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 2, 3}), DataError);

  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(35), b(35);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<double>(rng.below(9));
      b[i] = static_cast<double>(rng.below(9)) + 0.5 * a[i];
    }
    const auto got = spearman(a, b);
    REQUIRE(got.has_value());
    const double want = pearson_direct(ranks_by_counting(a), ranks_by_counting(b));
    CHECK(*got == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("sorted quantiles interpolate linearly") {
  const std::vector<double> one = {7};
  CHECK(quantile_sorted(one, 0.0) == 7.0);
  CHECK(quantile_sorted(one, 1.0) == 7.0);
  const std::vector<double> two = {1, 3};
  CHECK(quantile_sorted(two, 0.5) == 2.0);
  const std::vector<double> four = {0, 10, 20, 30};
  CHECK(quantile_sorted(four, 0.0) == 0.0);
  CHECK(quantile_sorted(four, 1.0) == 30.0);
  CHECK(quantile_sorted(four, 0.025) == Catch::Approx(0.75).margin(1e-12));  // h = 3*0.025
  CHECK(quantile_sorted(four, 0.975) == Catch::Approx(29.25).margin(1e-12));
  CHECK_THROWS_AS(quantile_sorted(std::vector<double>{}, 0.5), DataError);
  CHECK_THROWS_AS(quantile_sorted(four, 1.5), DataError);
  CHECK_THROWS_AS(quantile_sorted(four, -0.1), DataError);
}

TEST_CASE("bootstrap interval brackets the plug-in estimate and replays exactly") {
  Rng data_rng(41);
  std::vector<double> x(60), y(60);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = data_rng.normal();
    y[i] = x[i] + 0.5 * data_rng.normal();
  }
  const PairStatistic stat = [](std::span<const double> a, std::span<const double> b) {
    return spearman(a, b);
  };
  Rng r1(derive_seed(7, "ci"));
  const BootstrapCi ci = bootstrap_ci(x, y, stat, 2000, r1);
  Rng r2(derive_seed(7, "ci"));
  const BootstrapCi again = bootstrap_ci(x, y, stat, 2000, r2);
  CHECK(ci.lo == again.lo);
  CHECK(ci.hi == again.hi);
  CHECK(ci.lo < ci.hi);
  const double plugin = *spearman(x, y);
  CHECK(ci.lo < plugin);
  CHECK(ci.hi > plugin);
  CHECK(ci.lo > 0.0);  // strongly correlated sample

  Rng r3(1);
  CHECK_THROWS_AS(bootstrap_ci(x, std::vector<double>(10, 0.0), stat, 100, r3), DataError);
  Rng r4(1);
  CHECK_THROWS_AS(bootstrap_ci(x, y, stat, 0, r4), DataError);
}

TEST_CASE("bootstrap gives up after too many degenerate resamples") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {9, 9, 9, 9, 9};  // every resample of y is constant
  const PairStatistic stat = [](std::span<const double> a, std::span<const double> b) {
    return spearman(a, b);
  };
  Rng rng(5);
  CHECK_THROWS_AS(bootstrap_ci(x, y, stat, 50, rng), NumericError);
}

TEST_CASE("bootstrap comparison scores a clear winner and never a draw") {
  Rng data_rng(51);
  std::vector<double> x(80), strong(80), noise(80);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = data_rng.normal();
    strong[i] = x[i] + 0.2 * data_rng.normal();
    noise[i] = data_rng.normal();
  }
  Rng r1(9);
  CHECK(bootstrap_compare(x, strong, noise, 500, r1) > 0.95);
  Rng r2(9);
  CHECK(bootstrap_compare(x, strong, strong, 500, r2) == 0.0);  // strict inequality
  Rng r3(9);
  CHECK_THROWS_AS(bootstrap_compare(x, strong, std::vector<double>(3, 0.0), 10, r3), DataError);
}

TEST_CASE("rounding is half away from zero with clamping") {
  CHECK(round_and_clamp(0.5, -5, 5) == 1);
  CHECK(round_and_clamp(-0.5, -5, 5) == -1);
  CHECK(round_and_clamp(2.4, -5, 5) == 2);
  CHECK(round_and_clamp(2.5, -5, 5) == 3);
  CHECK(round_and_clamp(-2.5, -5, 5) == -3);
  CHECK(round_and_clamp(99.0, 0, 5) == 5);
  CHECK(round_and_clamp(-99.0, 0, 5) == 0);
  CHECK_THROWS_AS(round_and_clamp(1.0, 3, 2), DataError);
}

TEST_CASE("confusion matrix tallies match a map oracle") {
  Rng rng(61);
  std::vector<int> actual(200), predicted(200);
  for (size_t i = 0; i < actual.size(); ++i) {
    actual[i] = static_cast<int>(rng.below(6));
    predicted[i] = static_cast<int>(rng.below(6));
  }
  const ConfusionMatrix m = confusion(actual, predicted, 0, 5);
  std::map<std::pair<int, int>, int64_t> tally;
  for (size_t i = 0; i < actual.size(); ++i) ++tally[{actual[i], predicted[i]}];
  for (int a = 0; a <= 5; ++a)
    for (int p = 0; p <= 5; ++p) {
      const auto it = tally.find({a, p});
      CHECK(m.at(a, p) == (it == tally.end() ? 0 : it->second));
    }
  CHECK(m.total() == 200);
  CHECK(m.classes() == 6);

  const std::vector<int> bad = {0, 7};
  const std::vector<int> ok = {0, 0};
  CHECK_THROWS_WITH(confusion(ok, bad, 0, 5), Catch::Matchers::ContainsSubstring("case 1"));
  CHECK_THROWS_AS(confusion(ok, std::vector<int>{0}, 0, 5), DataError);
}

TEST_CASE("linear weighted kappa on known tables") {
  const std::vector<int> same = {0, 1, 2, 3, 2, 1};
  CHECK(*weighted_kappa_linear(same, same, 0, 3) == Catch::Approx(1.0).margin(1e-15));

  // hand-worked 2x2: observed disagreement .25, expected .5
  const std::vector<int> a = {0, 0, 1, 1};
  const std::vector<int> p = {0, 1, 1, 1};
  CHECK(*weighted_kappa_linear(a, p, 0, 1) == Catch::Approx(0.5).margin(1e-15));

  // both raters constant: chance disagreement is zero
  const std::vector<int> flat = {2, 2, 2};
  CHECK_FALSE(weighted_kappa_linear(flat, flat, 0, 5).has_value());

  CHECK_THROWS_AS(weighted_kappa_linear(std::vector<int>{}, std::vector<int>{}, 0, 1), DataError);
}

TEST_CASE("copd and gold staging thresholds") {
  CHECK(copd_diagnose(0.699999));
  CHECK_FALSE(copd_diagnose(0.7));
  CHECK_FALSE(copd_diagnose(0.81));

  CHECK(gold_stage(0.70, 20.0) == 0);  // ratio gate wins regardless of percent
  CHECK(gold_stage(0.75, 20.0) == 0);
  CHECK(gold_stage(0.69, 80.0) == 1);
  CHECK(gold_stage(0.69, 79.999) == 2);
  CHECK(gold_stage(0.69, 50.0) == 2);
  CHECK(gold_stage(0.69, 49.9) == 3);
  CHECK(gold_stage(0.69, 30.0) == 3);
  CHECK(gold_stage(0.69, 29.9) == 4);
}

TEST_CASE("roc curve structure and a tied hand case") {
  const std::vector<double> scores = {3, 3, 1};
  const std::vector<uint8_t> labels = {1, 0, 1};
  const RocCurve c = roc_auc(scores, labels);
  REQUIRE(c.points.size() == 3);
  CHECK(std::isinf(c.points[0].threshold));
  CHECK(c.points[0].fpr == 0.0);
  CHECK(c.points[0].tpr == 0.0);
  CHECK(c.points[1].threshold == 3.0);  // both tied scores enter together
  CHECK(c.points[1].fpr == 1.0);
  CHECK(c.points[1].tpr == 0.5);
  CHECK(c.points.back().fpr == 1.0);
  CHECK(c.points.back().tpr == 1.0);
  CHECK(c.auc == Catch::Approx(0.25).margin(1e-15));

  const std::vector<double> sep = {0.9, 0.8, 0.2, 0.1};
  const std::vector<uint8_t> sep_l = {1, 1, 0, 0};
  CHECK(roc_auc(sep, sep_l).auc == Catch::Approx(1.0).margin(1e-15));
  const std::vector<uint8_t> inv_l = {0, 0, 1, 1};
  CHECK(roc_auc(sep, inv_l).auc == Catch::Approx(0.0).margin(1e-15));

  CHECK_THROWS_AS(roc_auc(sep, std::vector<uint8_t>{1, 1, 1, 1}), DataError);
  CHECK_THROWS_AS(roc_auc(sep, std::vector<uint8_t>{1, 1, 0, 2}), DataError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{}, std::vector<uint8_t>{}), DataError);
}

TEST_CASE("roc area equals the pair-counting statistic under ties") {
  Rng rng(71);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 12 + rng.below(30);
    std::vector<double> scores(n);
    std::vector<uint8_t> labels(n);
    bool pos = false, neg = false;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(7));  // coarse grid forces ties
      labels[i] = rng.coin() ? 1 : 0;
      (labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    CHECK(roc_auc(scores, labels).auc ==
          Catch::Approx(auc_by_pairs(scores, labels)).margin(1e-12));
  }
}

TEST_CASE("densitometric score counts strictly below the threshold") {
  Volume v = make_volume(2, 2, 2);
  std::fill(v.mask.begin(), v.mask.end(), uint8_t{1});
  v.hu(0, 0, 0) = -980;
  v.hu(0, 0, 1) = -951;
  v.hu(0, 1, 0) = -950;  // exactly at threshold, not counted
  v.hu(0, 1, 1) = -949;
  v.hu(1, 0, 0) = -400;
  v.hu(1, 0, 1) = 0;
  v.hu(1, 1, 0) = -1000;
  v.hu(1, 1, 1) = -700;
  CHECK(densitometric_score(v, -950.0) == Catch::Approx(3.0 / 8.0).margin(1e-15));

  v.mask_at(1, 1, 0) = 0;  // drop one of the dark voxels from the mask
  CHECK(densitometric_score(v, -950.0) == Catch::Approx(2.0 / 7.0).margin(1e-15));

  Volume empty = make_volume(2, 2, 2);
  CHECK_THROWS_AS(densitometric_score(empty), DataError);
}
