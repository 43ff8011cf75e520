#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scan2num/common.hpp"
#include "scan2num/rng.hpp"
#include "scan2num/volume.hpp"

namespace scan2num {

// 1-based fractional ranks, ties averaged.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&v](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// nullopt when either side is constant (zero variance)
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  const size_t n = x.size();
  if (n < 2) throw DataError("pearson: need at least two points");
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// Spearman rank correlation: Pearson on average fractional ranks, which
// handles ties exactly. nullopt when either vector is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("spearman: length mismatch");
  if (x.size() < 3) throw DataError("spearman: need at least three points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

// Linearly interpolated quantile of a sorted sample (type 7): h = (n-1)p.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("quantile: p outside [0,1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted[sorted.size() - 1];
  const double frac = h - std::floor(h);
  return sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac;
}

struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
};

using PairStatistic =
    std::function<std::optional<double>(std::span<const double>, std::span<const double>)>;

// Percentile bootstrap, 95% interval. Cases are resampled with replacement;
// resamples on which the statistic is undefined are redrawn, with the total
// number of redraws capped at 10x resamples.
inline BootstrapCi bootstrap_ci(std::span<const double> x, std::span<const double> y,
                                const PairStatistic& stat, int resamples, Rng& rng) {
  if (x.size() != y.size() || x.empty()) throw DataError("bootstrap: length mismatch");
  if (resamples < 1) throw DataError("bootstrap: resamples must be >= 1");
  const size_t n = x.size();
  std::vector<double> rx(n), ry(n), values;
  values.reserve(static_cast<size_t>(resamples));
  int64_t redraws = 0;
  const int64_t cap = 10LL * resamples;
  while (values.size() < static_cast<size_t>(resamples)) {
    for (size_t i = 0; i < n; ++i) {
      const auto j = static_cast<size_t>(rng.below(n));
      rx[i] = x[j];
      ry[i] = y[j];
    }
    const auto s = stat(rx, ry);
    if (!s) {
      if (++redraws > cap)
        throw NumericError("bootstrap: exceeded " + std::to_string(cap) +
                           " redraws of degenerate resamples");
      continue;
    }
    values.push_back(*s);
  }
  std::sort(values.begin(), values.end());
  return {quantile_sorted(values, 0.025), quantile_sorted(values, 0.975)};
}

// P(rho(x,y1) > rho(x,y2)) over shared bootstrap resamples, strict inequality.
inline double bootstrap_compare(std::span<const double> x, std::span<const double> y1,
                                std::span<const double> y2, int resamples, Rng& rng) {
  if (x.size() != y1.size() || x.size() != y2.size() || x.empty())
    throw DataError("bootstrap_compare: length mismatch");
  if (resamples < 1) throw DataError("bootstrap_compare: resamples must be >= 1");
  const size_t n = x.size();
  std::vector<double> rx(n), r1(n), r2(n);
  int64_t wins = 0, done = 0, redraws = 0;
  const int64_t cap = 10LL * resamples;
  while (done < resamples) {
    for (size_t i = 0; i < n; ++i) {
      const auto j = static_cast<size_t>(rng.below(n));
      rx[i] = x[j];
      r1[i] = y1[j];
      r2[i] = y2[j];
    }
    const auto s1 = spearman(rx, r1);
    const auto s2 = spearman(rx, r2);
    if (!s1 || !s2) {
      if (++redraws > cap)
        throw NumericError("bootstrap_compare: exceeded " + std::to_string(cap) +
                           " redraws of degenerate resamples");
      continue;
    }
    if (*s1 > *s2) ++wins;
    ++done;
  }
  return static_cast<double>(wins) / static_cast<double>(resamples);
}

// Round half away from zero, then clamp to [lo, hi].
inline int round_and_clamp(double v, int lo, int hi) {
  if (lo > hi) throw DataError("round_and_clamp: empty range");
  const auto r = static_cast<int64_t>(std::llround(v));  // llround is half away from zero
  return static_cast<int>(std::min<int64_t>(hi, std::max<int64_t>(lo, r)));
}

struct ConfusionMatrix {
  int lo = 0;
  int hi = 0;
  std::vector<int64_t> counts;  // (hi-lo+1)^2, row = actual, col = predicted

  int classes() const { return hi - lo + 1; }
  int64_t& at(int actual, int predicted) {
    return counts[static_cast<size_t>((actual - lo) * classes() + (predicted - lo))];
  }
  int64_t at(int actual, int predicted) const {
    return counts[static_cast<size_t>((actual - lo) * classes() + (predicted - lo))];
  }
  int64_t total() const { return std::accumulate(counts.begin(), counts.end(), int64_t{0}); }
};

inline ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                                 int lo, int hi) {
  if (actual.size() != predicted.size()) throw DataError("confusion: length mismatch");
  if (lo > hi) throw DataError("confusion: empty class range");
  ConfusionMatrix m;
  m.lo = lo;
  m.hi = hi;
  m.counts.assign(static_cast<size_t>(m.classes()) * m.classes(), 0);
  for (size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < lo || actual[i] > hi || predicted[i] < lo || predicted[i] > hi)
      throw DataError("confusion: label outside [" + std::to_string(lo) + "," +
                      std::to_string(hi) + "] at case " + std::to_string(i));
    ++m.at(actual[i], predicted[i]);
  }
  return m;
}

// Cohen's kappa with linear weights w_ij = |i-j|/(k-1). nullopt when chance
// disagreement is zero (e.g. both raters constant).
inline std::optional<double> weighted_kappa_linear(std::span<const int> actual,
                                                   std::span<const int> predicted, int lo,
                                                   int hi) {
  const ConfusionMatrix m = confusion(actual, predicted, lo, hi);
  const int k = m.classes();
  if (m.total() == 0) throw DataError("weighted_kappa: no observations");
  const double n = static_cast<double>(m.total());
  std::vector<double> pa(static_cast<size_t>(k), 0.0), pb(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double o = static_cast<double>(m.at(lo + i, lo + j)) / n;
      pa[static_cast<size_t>(i)] += o;
      pb[static_cast<size_t>(j)] += o;
    }
  double observed = 0.0, expected = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double w = k == 1 ? 0.0 : std::abs(i - j) / static_cast<double>(k - 1);
      observed += w * static_cast<double>(m.at(lo + i, lo + j)) / n;
      expected += w * pa[static_cast<size_t>(i)] * pb[static_cast<size_t>(j)];
    }
  if (expected == 0.0) return std::nullopt;
  return 1.0 - observed / expected;
}

inline bool copd_diagnose(double fev1_fvc) { return fev1_fvc < 0.7; }

// Stage 0 = no COPD (ratio gate), stages 1-4 by percent-predicted thresholds.
inline int gold_stage(double fev1_fvc, double fev1pct) {
  if (fev1_fvc >= 0.7) return 0;
  if (fev1pct >= 80.0) return 1;
  if (fev1pct >= 50.0) return 2;
  if (fev1pct >= 30.0) return 3;
  return 4;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// ROC by descending score threshold (score >= threshold => positive call).
// The curve starts at the (inf, 0, 0) operating point; trapezoidal area,
// which on tied scores equals the tie-corrected rank statistic.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size() || scores.empty()) throw DataError("roc: length mismatch");
  int64_t npos = 0, nneg = 0;
  for (uint8_t l : labels) {
    if (l > 1) throw DataError("roc: labels must be 0 or 1");
    l ? ++npos : ++nneg;
  }
  if (npos == 0 || nneg == 0) throw DataError("roc: need both classes");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });
  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      labels[order[i]] ? ++tp : ++fp;
      ++i;
    }
    curve.points.push_back({t, static_cast<double>(fp) / static_cast<double>(nneg),
                            static_cast<double>(tp) / static_cast<double>(npos)});
  }
  double auc = 0.0;
  for (size_t p = 1; p < curve.points.size(); ++p) {
    const auto& a = curve.points[p - 1];
    const auto& b = curve.points[p];
    auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  curve.auc = auc;
  return curve;
}

// Share of lung-mask voxels below the HU threshold (classic density index).
inline double densitometric_score(const Volume& v, double threshold_hu = -950.0) {
  int64_t mask_count = 0, below = 0;
  const auto n = static_cast<size_t>(v.numel());
  if (v.voxels.size() != n || v.mask.size() != n)
    throw DataError("densitometric_score: payload sizes do not match dims");
  for (size_t i = 0; i < n; ++i) {
    if (!v.mask[i]) continue;
    ++mask_count;
    if (static_cast<double>(v.voxels[i]) < threshold_hu) ++below;
  }
  if (mask_count == 0) throw DataError("densitometric_score: mask has no foreground voxels");
  return static_cast<double>(below) / static_cast<double>(mask_count);
}

}  // namespace scan2num
