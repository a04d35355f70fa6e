#ifndef CRITAFFINE_STATS_HPP
#define CRITAFFINE_STATS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

namespace critaffine::stats {

/// Estimate with a standard error.
struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

/// Survival function of the chi-squared law.
inline double chi2_sf(double x, double dof) {
  if (dof <= 0) return 1.0;
  if (x <= 0) return 1.0;
  boost::math::chi_squared_distribution<double> law(dof);
  return boost::math::cdf(boost::math::complement(law, x));
}

/// Kolmogorov limiting survival P(K > t).
inline double kolmogorov_sf(double t) {
  if (t <= 0.0) return 1.0;
  if (t < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction on the effective size).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  KsResult out;
  if (a.empty() || b.empty()) return out;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  const double ne = na * nb / (na + nb);
  const double sq = std::sqrt(ne);
  out.statistic = d;
  out.p_value = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
  return out;
}

/// Sum and cluster standard error of per-cluster totals.
///
/// `cluster_totals` holds the contribution of each independent cluster to an
/// additive estimator; the estimator is their sum.
inline Estimate cluster_sum(std::span<const double> cluster_totals) {
  Estimate e;
  const std::size_t n = cluster_totals.size();
  if (n == 0) return e;
  double sum = 0.0;
  for (double c : cluster_totals) sum += c;
  e.value = sum;
  if (n < 2) return e;
  const double mean = sum / n;
  double ss = 0.0;
  for (double c : cluster_totals) ss += (c - mean) * (c - mean);
  e.stderr_ = std::sqrt(ss * n / (n - 1));
  return e;
}

/// Ordinary least squares fit of y = c0 + c1 x (with optional weights).
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_stderr = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y,
                        std::span<const double> w = {}) {
  LineFit f;
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    sw += wi;
    sx += wi * x[i];
    sy += wi * y[i];
    sxx += wi * x[i] * x[i];
    sxy += wi * x[i] * y[i];
  }
  const double det = sw * sxx - sx * sx;
  if (det == 0.0) {
    f.intercept = sw > 0 ? sy / sw : 0.0;
    return f;
  }
  f.slope = (sw * sxy - sx * sy) / det;
  f.intercept = (sy - f.slope * sx) / sw;
  if (!w.empty()) f.slope_stderr = std::sqrt(sw / det);
  return f;
}

/// Solves A x = b for symmetric positive definite A (row-major n x n).
/// Returns false when A is not numerically positive definite.
inline bool solve_spd(std::vector<double> a, std::vector<double>& b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    a[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return true;
}

}  // namespace critaffine::stats

#endif  // CRITAFFINE_STATS_HPP
