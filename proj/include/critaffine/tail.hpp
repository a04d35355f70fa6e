#ifndef CRITAFFINE_TAIL_HPP
#define CRITAFFINE_TAIL_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "error.hpp"
#include "invariant.hpp"
#include "model.hpp"
#include "stats.hpp"

namespace critaffine {

/// integrate(u -> phi(u / z)).
template <class Phi>
stats::Estimate dilation(const PointCloudMeasure& nu, double z, Phi&& phi) {
  if (!(z > 0.0)) throw Error(ErrorKind::InvalidConfig, "dilation needs z > 0");
  Vec scaled(static_cast<std::size_t>(nu.dim));
  return integrate(nu, [&](std::span<const double> u) {
    for (std::size_t k = 0; k < u.size(); ++k) scaled[k] = u[k] / z;
    return phi(std::span<const double>(scaled));
  });
}

/// Radial shell lo < |u| <= hi.
struct Shell {
  double lo = 0.0;
  double hi = 0.0;
};

/// Masses of several shells from one pass over the cloud.
struct ShellPass {
  std::vector<Shell> shells;
  /// cluster_totals[s][c]: weight of cluster c in shell s.
  std::vector<Vec> cluster_totals;
  std::vector<std::size_t> n_excursions;
  Vec mass;
  Vec stderr_;
};

inline ShellPass shell_pass(const PointCloudMeasure& nu, std::vector<Shell> shells) {
  ShellPass out;
  const std::size_t ns = shells.size();
  const std::size_t nc = nu.n_clusters();
  const std::size_t ne = nu.cluster_of_excursion.size();
  out.cluster_totals.assign(ns, Vec(nc, 0.0));
  std::vector<std::vector<bool>> seen(ns, std::vector<bool>(ne, false));
  out.n_excursions.assign(ns, 0);
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double r = norm(nu.point(i));
    const auto e = nu.excursion[i];
    for (std::size_t s = 0; s < ns; ++s) {
      if (r > shells[s].lo && r <= shells[s].hi) {
        out.cluster_totals[s][nu.cluster_of_excursion[e]] += nu.weights[i];
        if (!seen[s][e]) {
          seen[s][e] = true;
          ++out.n_excursions[s];
        }
      }
    }
  }
  out.mass.resize(ns);
  out.stderr_.resize(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    auto est = stats::cluster_sum(out.cluster_totals[s]);
    out.mass[s] = est.value;
    out.stderr_[s] = est.stderr_;
  }
  out.shells = std::move(shells);
  return out;
}

namespace detail {

/// Cluster covariance of the shell sums (matches cluster_sum's variance).
inline Vec cluster_covariance(const std::vector<Vec>& totals, const std::vector<std::size_t>& idx) {
  const std::size_t k = idx.size();
  Vec cov(k * k, 0.0);
  if (k == 0) return cov;
  const std::size_t n = totals[idx[0]].size();
  if (n < 2) return cov;
  Vec mean(k, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    for (double v : totals[idx[a]]) mean[a] += v;
    mean[a] /= static_cast<double>(n);
  }
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t a = 0; a < k; ++a) {
      const double da = totals[idx[a]][c] - mean[a];
      for (std::size_t b = 0; b <= a; ++b) cov[a * k + b] += da * (totals[idx[b]][c] - mean[b]);
    }
  const double f = static_cast<double>(n) / static_cast<double>(n - 1);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b <= a; ++b) cov[b * k + a] = cov[a * k + b] *= f;
  return cov;
}

}  // namespace detail

/// sum(num) / sum(den) with a delta-method cluster standard error.
inline stats::Estimate ratio_estimate(std::span<const double> num, std::span<const double> den) {
  double sn = 0.0, sd = 0.0;
  for (double v : num) sn += v;
  for (double v : den) sd += v;
  if (sd == 0.0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double r = sn / sd;
  Vec lin(num.size());
  for (std::size_t c = 0; c < num.size(); ++c) lin[c] = (num[c] - r * den[c]) / sd;
  return {r, stats::cluster_sum(lin).stderr_};
}

struct AnnulusRow {
  double z = 0.0;
  double alpha = 1.0;
  double beta = kE;
  double mass = 0.0;
  double stderr_ = 0.0;
  std::size_t n_excursions = 0;
  bool reliable = false;
};

struct TailOptions {
  /// Excursions needed for an annulus to count as reliable.
  std::size_t min_excursions = 100;
  /// Smallest admissible z.
  double z_min = std::exp(2.0);
};

struct TailReport {
  std::vector<AnnulusRow> annuli;
  /// Constant C+ (GLS mean of the reliable annulus masses, divided by p on a lattice).
  stats::Estimate c_plus;
  double ci99_lo = 0.0;
  double ci99_hi = 0.0;
  double chi2 = 0.0;
  int dof = 0;
  double p_value = 1.0;
  double lattice_span = 0.0;
  std::size_t n_reliable = 0;
};

/// C+ from annuli z < |u| <= e z (aperiodic) or z < |u| <= e^p z (lattice, divided by p).
/// Flatness: GLS chi-square of the reliable masses against a common value.
inline TailReport estimate_cplus(const PointCloudMeasure& nu, const Vec& z_grid, double lattice_p = 0.0,
                                 const TailOptions& opt = {}) {
  TailReport rep;
  rep.lattice_span = lattice_p;
  const double beta = lattice_p > 0 ? std::exp(lattice_p) : kE;
  std::vector<Shell> shells;
  for (double z : z_grid) shells.push_back({z, beta * z});
  auto pass = shell_pass(nu, shells);
  std::vector<std::size_t> used;
  for (std::size_t s = 0; s < z_grid.size(); ++s) {
    AnnulusRow row;
    row.z = z_grid[s];
    row.beta = beta;
    row.mass = pass.mass[s];
    row.stderr_ = pass.stderr_[s];
    row.n_excursions = pass.n_excursions[s];
    row.reliable = row.z >= opt.z_min * (1 - 1e-12) && row.n_excursions >= opt.min_excursions && row.stderr_ > 0;
    if (row.reliable) used.push_back(s);
    rep.annuli.push_back(row);
  }
  rep.n_reliable = used.size();
  if (used.empty())
    throw Error(ErrorKind::InsufficientSupport, "no annulus in the z grid has enough contributing excursions");
  const std::size_t k = used.size();
  Vec cov = detail::cluster_covariance(pass.cluster_totals, used);
  Vec ones(k, 1.0), m(k);
  for (std::size_t a = 0; a < k; ++a) m[a] = pass.mass[used[a]];
  Vec w = ones;
  if (!stats::solve_spd(cov, w, k)) {
    // Degenerate covariance: fall back to independent inverse variances.
    for (std::size_t a = 0; a < k; ++a) w[a] = 1.0 / cov[a * k + a];
  }
  double sw = 0.0, swm = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    sw += w[a];
    swm += w[a] * m[a];
  }
  const double c = swm / sw;
  Vec resid(k);
  for (std::size_t a = 0; a < k; ++a) resid[a] = m[a] - c;
  Vec sol = resid;
  if (stats::solve_spd(cov, sol, k)) {
    for (std::size_t a = 0; a < k; ++a) rep.chi2 += resid[a] * sol[a];
  } else {
    for (std::size_t a = 0; a < k; ++a) rep.chi2 += resid[a] * resid[a] / cov[a * k + a];
  }
  rep.dof = static_cast<int>(k) - 1;
  rep.p_value = stats::chi2_sf(rep.chi2, rep.dof);
  const double scale = lattice_p > 0 ? 1.0 / lattice_p : 1.0;
  rep.c_plus = {c * scale, scale / std::sqrt(sw)};
  rep.ci99_lo = rep.c_plus.value - 2.576 * rep.c_plus.stderr_;
  rep.ci99_hi = rep.c_plus.value + 2.576 * rep.c_plus.stderr_;
  return rep;
}

/// mass(z < |u| <= e^{n p} z) / mass(z < |u| <= e^p z).
inline stats::Estimate lattice_ratio(const PointCloudMeasure& nu, double z, double p, int n = 2) {
  auto pass = shell_pass(nu, {{z, std::exp(n * p) * z}, {z, std::exp(p) * z}});
  return ratio_estimate(pass.cluster_totals[0], pass.cluster_totals[1]);
}

// ---------------------------------------------------------------------------
// Angular measure.
// ---------------------------------------------------------------------------

struct AngularBin {
  /// Bin centre on the sphere.
  Vec center;
  double weight = 0.0;
  double stderr_ = 0.0;
};

struct AngularHistogram {
  int dim = 1;
  double z_min = 0.0;
  std::vector<AngularBin> bins;
  double mass = 0.0;
  std::size_t n_points = 0;
};

namespace detail {

inline std::size_t angular_bin(std::span<const double> u, int n_bins) {
  const int d = static_cast<int>(u.size());
  if (d == 1) return u[0] > 0 ? 1 : 0;
  if (d == 2) {
    double t = std::atan2(u[1], u[0]);
    if (t < 0) t += 2.0 * kPi;
    auto b = static_cast<std::size_t>(t / (2.0 * kPi) * n_bins);
    return std::min(b, static_cast<std::size_t>(n_bins - 1));
  }
  std::size_t b = 0;
  for (int k = 0; k < d; ++k)
    if (u[k] > 0) b |= std::size_t{1} << k;
  return b;
}

}  // namespace detail

/// Normalized histogram of u/|u| over points with |u| > z_min.
/// Bins: {-1, +1} for d = 1, n_bins equal arcs for d = 2, the 2^d orthants for d >= 3.
inline AngularHistogram angular_measure(const PointCloudMeasure& nu, double z_min, int n_bins = 64,
                                        std::size_t min_points = 100) {
  AngularHistogram h;
  h.dim = nu.dim;
  h.z_min = z_min;
  const int d = nu.dim;
  std::size_t nb;
  if (d == 1)
    nb = 2;
  else if (d == 2)
    nb = static_cast<std::size_t>(std::max(n_bins, 1));
  else if (d <= 16)
    nb = std::size_t{1} << d;
  else
    throw Error(ErrorKind::InvalidConfig, "orthant binning supports d <= 16");
  const std::size_t nc = nu.n_clusters();
  std::vector<Vec> totals(nb, Vec(nc, 0.0));
  Vec all(nc, 0.0);
  for (std::size_t i = 0; i < nu.size(); ++i) {
    auto u = nu.point(i);
    if (norm(u) <= z_min) continue;
    const auto b = detail::angular_bin(u, static_cast<int>(nb));
    const auto c = nu.cluster(i);
    totals[b][c] += nu.weights[i];
    all[c] += nu.weights[i];
    ++h.n_points;
  }
  if (h.n_points < min_points)
    throw Error(ErrorKind::InsufficientSupport,
                "only " + std::to_string(h.n_points) + " points beyond z_min for the angular measure");
  for (double v : all) h.mass += v;
  for (std::size_t b = 0; b < nb; ++b) {
    AngularBin bin;
    auto r = ratio_estimate(totals[b], all);
    bin.weight = r.value;
    bin.stderr_ = r.stderr_;
    if (d == 1) {
      bin.center = {b == 1 ? 1.0 : -1.0};
    } else if (d == 2) {
      const double t = (static_cast<double>(b) + 0.5) * 2.0 * kPi / static_cast<double>(nb);
      bin.center = {std::cos(t), std::sin(t)};
    } else {
      bin.center.resize(d);
      for (int k = 0; k < d; ++k) bin.center[k] = ((b >> k) & 1 ? 1.0 : -1.0) / std::sqrt(static_cast<double>(d));
    }
    h.bins.push_back(std::move(bin));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Bound diagnostics.
// ---------------------------------------------------------------------------

struct BoundDiagnostics {
  /// Named scalar results, written to bounds.csv in insertion order.
  std::vector<std::pair<std::string, double>> values;
  /// "applicable" or "not_applicable" for the half-space dependent checks.
  std::string g_status = "applicable";

  double get(const std::string& name) const {
    for (const auto& [k, v] : values)
      if (k == name) return v;
    throw Error(ErrorKind::InvalidConfig, "no diagnostic named " + name);
  }
  void set(std::string name, double v) { values.emplace_back(std::move(name), v); }
};

struct BoundOptions {
  /// Evaluate the half-space dependent checks (positivity, lower bound).
  bool require_g = false;
  /// Threshold radius M for the integral inequality.
  double integral_M = std::exp(4.0);
  /// Smallest z for the slowly-varying ratios.
  double sv_z_min = std::exp(4.0);
};

/// Log bound, positivity, slowly-varying ratios and the integral inequality on a z grid.
inline BoundDiagnostics bound_diagnostics(const PointCloudMeasure& nu, const MuSpec& spec, const Vec& z_grid,
                                          const BoundOptions& opt = {}) {
  BoundDiagnostics out;
  const bool g_ok = spec.dim == 1 || positive_coordinate(spec) >= 0;
  if (!g_ok) {
    if (opt.require_g)
      throw Error(ErrorKind::ConfigNotCoveredByG, "no positive invariant half-space for this b_law");
    out.g_status = "not_applicable";
  }
  std::vector<Shell> shells;
  for (double z : z_grid) shells.push_back({-1.0, z});           // balls
  for (double z : z_grid) shells.push_back({z, kE * z});          // L(z)
  for (double z : z_grid) shells.push_back({2 * z, 2 * kE * z});  // L(2z)
  for (double z : z_grid) shells.push_back({z / 2, kE * z / 2});  // L(z/2)
  auto pass = shell_pass(nu, shells);
  const std::size_t n = z_grid.size();

  double sup = 0.0, inf = kInf;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = pass.mass[i] / (2.0 + std::log(z_grid[i]));
    sup = std::max(sup, r);
    inf = std::min(inf, r);
  }
  out.set("log_bound_sup", sup);
  out.set("log_bound_min", inf);
  out.set("log_bound_spread", sup / inf);

  double min_lower = kInf, min_mass = kInf, l_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = pass.mass[n + i], se = pass.stderr_[n + i];
    min_lower = std::min(min_lower, m - 2.576 * se);
    min_mass = std::min(min_mass, m);
    l_max = std::max(l_max, m);
  }
  if (g_ok) {
    out.set("positivity_min_mass", min_mass);
    out.set("positivity_min_lower99", min_lower);
  }

  double up_lo = kInf, up_hi = 0.0, dn_lo = kInf, dn_hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (z_grid[i] < opt.sv_z_min) continue;
    const auto& base = pass.cluster_totals[n + i];
    const double up = ratio_estimate(pass.cluster_totals[2 * n + i], base).value;
    const double dn = ratio_estimate(pass.cluster_totals[3 * n + i], base).value;
    up_lo = std::min(up_lo, up);
    up_hi = std::max(up_hi, up);
    dn_lo = std::min(dn_lo, dn);
    dn_hi = std::max(dn_hi, dn);
  }
  if (up_hi > 0.0) {
    out.set("sv_ratio_2z_min", up_lo);
    out.set("sv_ratio_2z_max", up_hi);
    out.set("sv_ratio_half_z_min", dn_lo);
    out.set("sv_ratio_half_z_max", dn_hi);
  }

  // int_{|u| >= M} |u|^{-1/2} nu(du) <= l int_{M/e}^inf a^{-1/2} da/a = 2 l (M/e)^{-1/2}.
  if (g_ok) {
    const double M = opt.integral_M;
    const auto lhs = integrate(nu, [M](std::span<const double> u) {
      const double r = norm(u);
      return r >= M ? 1.0 / std::sqrt(r) : 0.0;
    });
    const double rhs = l_max * 2.0 / std::sqrt(M / kE);
    out.set("integral_lhs", lhs.value);
    out.set("integral_rhs", rhs);
    out.set("integral_ratio", lhs.value / rhs);
  }
  out.set("mass_beyond_store_radius", nu.meta.mass_beyond_radius);
  return out;
}

}  // namespace critaffine

#endif  // CRITAFFINE_TAIL_HPP
