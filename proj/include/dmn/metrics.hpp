#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dmn {

struct WeightedPoint {
  double x = 0.0;
  double w = 1.0;
};

/// Wasserstein-1 distance between two weighted point sets on the real line.
/// Each side's weights are normalized to 1; the result is the integral of
/// |CDF_a - CDF_b| over the merged support.
inline double emd_1d(std::vector<WeightedPoint> a, std::vector<WeightedPoint> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("emd_1d: empty input");
  auto prepare = [](std::vector<WeightedPoint>& v) {
    double total = 0.0;
    for (const auto& p : v) {
      if (p.w < 0.0 || !std::isfinite(p.w) || !std::isfinite(p.x))
        throw std::invalid_argument("emd_1d: weights must be finite and non-negative");
      total += p.w;
    }
    if (total <= 0.0) throw std::invalid_argument("emd_1d: zero total weight");
    for (auto& p : v) p.w /= total;
    std::sort(v.begin(), v.end(), [](const WeightedPoint& l, const WeightedPoint& r) { return l.x < r.x; });
  };
  prepare(a);
  prepare(b);
  std::size_t i = 0, j = 0;
  double cdf_a = 0.0, cdf_b = 0.0, dist = 0.0;
  double x = std::min(a.front().x, b.front().x);
  while (i < a.size() || j < b.size()) {
    const double next = std::min(i < a.size() ? a[i].x : INFINITY, j < b.size() ? b[j].x : INFINITY);
    dist += std::abs(cdf_a - cdf_b) * (next - x);
    x = next;
    while (i < a.size() && a[i].x == x) cdf_a += a[i++].w;
    while (j < b.size() && b[j].x == x) cdf_b += b[j++].w;
  }
  return dist;
}

/// Unit-weight samples.
inline double emd_1d(std::span<const double> a, std::span<const double> b) {
  std::vector<WeightedPoint> pa, pb;
  pa.reserve(a.size());
  pb.reserve(b.size());
  for (double x : a) pa.push_back({x, 1.0});
  for (double x : b) pb.push_back({x, 1.0});
  return emd_1d(std::move(pa), std::move(pb));
}

/// Histograms over the integer line 0..n-1 (bin i sits at x = i).
inline double emd_histogram(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("emd_histogram: size mismatch");
  std::vector<WeightedPoint> pa, pb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa.push_back({static_cast<double>(i), a[i]});
    pb.push_back({static_cast<double>(i), b[i]});
  }
  return emd_1d(std::move(pa), std::move(pb));
}

/// Indices sorted by descending score; ties keep the lower index first.
inline std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });
  return idx;
}

/// Fraction of cases whose true label is among the first k ranked labels.
template <class Label>
double topk_accuracy(const std::vector<std::vector<Label>>& ranked, const std::vector<Label>& truth, std::size_t k) {
  if (ranked.size() != truth.size()) throw std::invalid_argument("topk_accuracy: size mismatch");
  if (ranked.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    const auto end = r.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.size()));
    if (std::find(r.begin(), end, truth[i]) != end) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

/// Linear-interpolation empirical quantile of sorted data, p in [0, 1].
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty input");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct QQPoint {
  double reference = 0.0;
  double generated = 0.0;
};

/// Matched empirical quantiles at k / (Q + 1), k = 1..Q.
inline std::vector<QQPoint> qq_points(std::vector<double> generated, std::vector<double> reference, std::size_t quantiles) {
  if (generated.empty() || reference.empty()) throw std::invalid_argument("qq_points: empty input");
  std::sort(generated.begin(), generated.end());
  std::sort(reference.begin(), reference.end());
  std::vector<QQPoint> out;
  out.reserve(quantiles);
  for (std::size_t k = 1; k <= quantiles; ++k) {
    const double p = static_cast<double>(k) / static_cast<double>(quantiles + 1);
    out.push_back({quantile_sorted(reference, p), quantile_sorted(generated, p)});
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 with fewer than two values
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd out;
  out.n = v.size();
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

}  // namespace dmn
