#ifndef CRITAFFINE_CROSSVAL_HPP
#define CRITAFFINE_CROSSVAL_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "invariant.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "potential.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "tail.hpp"

namespace critaffine {

// ---------------------------------------------------------------------------
// Radial test functions.
// ---------------------------------------------------------------------------

/// Angular factor zeta_0 evaluated on unit vectors.
using AngularFactor = std::function<double(std::span<const double>)>;

/// Profile p(s) of a radial test function phi(u) = p(log|u|) zeta_0(u/|u|).
///
/// Phi_gamma: p(s) = int r(t) e^{-gamma |t + s|} dt. Zeta: p(s) = e^{-gamma |s|}.
/// Tabulated on a grid of step h over [-s_max, s_max] with cubic Hermite
/// interpolation; outside, the exact exponential tails when r is effectively
/// compactly supported at the scale e^{gamma |t|}, else direct quadrature.
class RadialProfile {
 public:
  static RadialProfile zeta(double gamma) {
    RadialProfile p;
    p.gamma_ = gamma;
    p.kernel_only_ = true;
    p.name_ = "zeta";
    return p;
  }

  static RadialProfile phi(const ALaw& law, double gamma, double h = 0.005, double s_max = 64.0, int panels = 200) {
    if (!(gamma > 0)) throw Error(ErrorKind::InvalidConfig, "gamma must be positive");
    RadialProfile p;
    p.law_ = law;
    p.gamma_ = gamma;
    p.h_ = h;
    p.panels_ = panels;
    p.name_ = "Phi_gamma";
    p.support_ = r_support_radius(law);
    p.kinks_ = {0.0};
    if (const auto* t = std::get_if<TwoPointA>(&law)) p.kinks_.insert(p.kinks_.end(), {t->p, -t->p});
    if (const auto* e = std::get_if<ShiftedExpMixA>(&law)) p.kinks_.insert(p.kinks_.end(), {1.0 / e->rate, -1.0 / e->rate});
    if (const auto* d = std::get_if<DiscreteA>(&law))
      for (double v : d->values) p.kinks_.push_back(-v);

    // Radius beyond which r(t) e^{gamma |t|} is negligible.
    p.asym_ok_ = false;
    for (double R = 0.5; R <= p.support_ + 0.5; R += 0.5) {
      bool small = true;
      for (double t = R; t <= std::min(R + 20.0, p.support_ + 1.0); t += 0.25) {
        const double v = std::max(r_kernel(law, t), r_kernel(law, -t)) * std::exp(gamma * t);
        if (!(v < 1e-16)) {
          small = false;
          break;
        }
      }
      if (small) {
        p.r_eff_ = R;
        p.asym_ok_ = true;
        break;
      }
    }
    if (p.asym_ok_) {
      p.support_ = p.r_eff_;
      p.m_plus_ = p.quad([&](double t) { return r_kernel(law, t) * std::exp(gamma * t); }, -p.r_eff_, p.r_eff_, {});
      p.m_minus_ = p.quad([&](double t) { return r_kernel(law, t) * std::exp(-gamma * t); }, -p.r_eff_, p.r_eff_, {});
      s_max = std::min(s_max, p.r_eff_ + 2.0);
    }
    const auto half = static_cast<long>(std::ceil(s_max / h));
    p.s0_ = -static_cast<double>(half) * h;
    p.table_.resize(static_cast<std::size_t>(2 * half + 1));
    for (std::size_t i = 0; i < p.table_.size(); ++i) p.table_[i] = p.direct(p.s0_ + static_cast<double>(i) * h);
    return p;
  }

  double gamma() const { return gamma_; }
  const std::string& name() const { return name_; }

  double operator()(double s) const {
    if (kernel_only_) return std::exp(-gamma_ * std::abs(s));
    const double u = (s - s0_) / h_;
    const auto n = static_cast<long>(table_.size());
    if (u >= 0.0 && u <= static_cast<double>(n - 1)) {
      const auto i = std::min(static_cast<long>(u), n - 2);
      const double f = u - static_cast<double>(i);
      if (f == 0.0) return table_[static_cast<std::size_t>(i)];
      // Cubic Hermite, fourth-order difference slopes.
      auto at = [&](long k) { return table_[static_cast<std::size_t>(std::clamp(k, 0L, n - 1))]; };
      auto slope = [&](long k) { return (at(k - 2) - 8.0 * at(k - 1) + 8.0 * at(k + 1) - at(k + 2)) / 12.0; };
      const double y0 = at(i), y1 = at(i + 1);
      const double m0 = slope(i), m1 = slope(i + 1);
      const double f2 = f * f, f3 = f2 * f;
      return (2 * f3 - 3 * f2 + 1) * y0 + (f3 - 2 * f2 + f) * m0 + (-2 * f3 + 3 * f2) * y1 + (f3 - f2) * m1;
    }
    if (asym_ok_) return s > 0 ? std::exp(-gamma_ * s) * m_minus_ : std::exp(gamma_ * s) * m_plus_;
    return direct(s);
  }

  /// int p(s) ds by quadrature (equals int Phi_gamma(a) da / a).
  double integral() const {
    if (kernel_only_) return 2.0 / gamma_;
    const double lo = s0_, hi = s0_ + h_ * static_cast<double>(table_.size() - 1);
    auto mid = integrate_adaptive([&](double s) { return (*this)(s); }, lo, hi, 1e-12, 1e-12, 100000, 64).value;
    double tails = 0.0;
    if (asym_ok_) {
      tails = (std::exp(-gamma_ * hi) * m_minus_ + std::exp(gamma_ * lo) * m_plus_) / gamma_;
    } else {
      tails = integrate_adaptive([&](double s) { return direct(s); }, hi, hi + 80.0 / gamma_, 1e-12, 1e-10, 20000, 32).value +
              integrate_adaptive([&](double s) { return direct(s); }, lo - 80.0 / gamma_, lo, 1e-12, 1e-10, 20000, 32).value;
    }
    return mid + tails;
  }

  /// p(s) by panel quadrature in t, split at the kinks of r and of e^{-gamma|t+s|}.
  double direct(double s) const {
    if (kernel_only_) return std::exp(-gamma_ * std::abs(s));
    const double R = support_;
    return quad([&](double t) { return r_kernel(law_, t) * std::exp(-gamma_ * std::abs(t + s)); }, -R, R, {-s});
  }

 private:
  template <class F>
  double quad(F&& f, double lo, double hi, std::vector<double> extra) const {
    std::vector<double> br = {lo, hi};
    for (double k : kinks_) br.push_back(k);
    for (double k : extra) br.push_back(k);
    std::vector<double> pts;
    for (double b : br)
      if (b >= lo && b <= hi) pts.push_back(b);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const double a = pts[i], b = pts[i + 1];
      if (b - a <= 0) continue;
      const int n = std::max(1, static_cast<int>(std::lround(panels_ * (b - a) / (hi - lo))));
      total += integrate_panels(f, a, b, n);
    }
    return total;
  }

  ALaw law_ = LogNormalA{1.0};
  double gamma_ = 1.0;
  double h_ = 0.005;
  int panels_ = 200;
  bool kernel_only_ = false;
  std::string name_;
  double support_ = 0.0;
  double r_eff_ = 0.0;
  bool asym_ok_ = false;
  double m_plus_ = 0.0, m_minus_ = 0.0;
  std::vector<double> kinks_;
  double s0_ = 0.0;
  Vec table_;
};

/// phi(u) = p(log|u|) zeta_0(u/|u|).
struct RadialTestFn {
  RadialProfile profile;
  std::optional<AngularFactor> zeta0;

  double gamma() const { return profile.gamma(); }

  double angular(std::span<const double> u) const {
    if (!zeta0) return 1.0;
    const double r = norm(u);
    Vec dir(u.begin(), u.end());
    for (double& v : dir) v /= r;
    return (*zeta0)(dir);
  }

  double operator()(std::span<const double> u) const {
    const double r = norm(u);
    if (r == 0.0) return 0.0;
    return profile(std::log(r)) * angular(u);
  }
};

inline RadialTestFn build_phi(const MuSpec& spec, double gamma, std::optional<AngularFactor> zeta0 = std::nullopt) {
  return RadialTestFn{RadialProfile::phi(spec.a_law, gamma), std::move(zeta0)};
}

// ---------------------------------------------------------------------------
// Log-radius histograms of the cloud.
// ---------------------------------------------------------------------------

struct HistOptions {
  double h = 0.005;
  double l_min = -40.0;
  double l_max = 25.0;
  int n_batches = 64;
  std::uint64_t seed = 1;
  int workers = 1;
  bool with_psi = true;
};

/// Cloud-in-cell histograms of log|u| per batch (batch = cluster mod n_batches).
///
/// f: +w zeta_0 at log|u|. psi: +w zeta_0 at log|A u| and -w zeta_0 at log|A u + B|
/// with one fresh (B, A) per point, so that sum_j psi_j p(l_j - x) estimates psi_phi(x).
struct LogHistogram {
  double l0 = 0.0;
  double h = 0.005;
  std::size_t n_bins = 0;
  int n_batches = 0;
  std::vector<Vec> f;
  std::vector<Vec> psi;
  /// Per batch: sum_i w_i |Delta l_i| sample of the paired log-shift (Fubini check input).
  std::vector<Vec> shifts;
  /// Weight clamped at the ends of the log range.
  double clamped = 0.0;

  double l(std::size_t j) const { return l0 + static_cast<double>(j) * h; }
};

namespace detail {

/// Contiguous runs of points sharing one cluster.
struct ClusterRun {
  std::size_t begin, end;
  std::uint32_t cluster;
};

inline std::vector<ClusterRun> cluster_runs(const PointCloudMeasure& nu) {
  std::vector<ClusterRun> runs;
  for (std::size_t i = 0; i < nu.size();) {
    const auto c = nu.cluster(i);
    std::size_t j = i + 1;
    while (j < nu.size() && nu.cluster(j) == c) ++j;
    runs.push_back({i, j, c});
    i = j;
  }
  return runs;
}

}  // namespace detail

/// Builds the histograms; the grid origin is aligned so that x_grid offsets are whole bins.
inline LogHistogram build_log_histogram(const MuSpec& spec, const PointCloudMeasure& nu, const GridFn& x_grid,
                                        const std::optional<AngularFactor>& zeta0, HistOptions opt) {
  LogHistogram hist;
  // Snap h to divide dx and put the x grid on bin centres.
  const double ratio = std::max(1.0, std::round(x_grid.dx / opt.h));
  hist.h = x_grid.dx / ratio;
  const double back = std::ceil((x_grid.x0 - opt.l_min) / hist.h);
  hist.l0 = x_grid.x0 - back * hist.h;
  hist.n_bins = static_cast<std::size_t>(std::ceil((opt.l_max - hist.l0) / hist.h)) + 1;
  hist.n_batches = std::max(2, opt.n_batches);
  const auto nb = static_cast<std::size_t>(hist.n_batches);
  hist.f.assign(nb, Vec(hist.n_bins, 0.0));
  if (opt.with_psi) {
    hist.psi.assign(nb, Vec(hist.n_bins, 0.0));
    hist.shifts.assign(nb, Vec());
  }
  Vec clamped(nb, 0.0);
  const auto runs = detail::cluster_runs(nu);
  const int d = nu.dim;
  auto angular = [&](const double* v) {
    if (!zeta0) return 1.0;
    Vec dir(v, v + d);
    const double r = norm(dir);
    if (r == 0.0) return 0.0;
    for (double& x : dir) x /= r;
    return (*zeta0)(dir);
  };

  parallel_for(nb, opt.workers, [&](std::size_t b) {
    PairSampler sampler(spec);
    Vec& fh = hist.f[b];
    Vec bb(static_cast<std::size_t>(d)), au(static_cast<std::size_t>(d)), aub(static_cast<std::size_t>(d));
    auto deposit = [&](Vec& target, double logr, double w) {
      double u = (logr - hist.l0) / hist.h;
      const double top = static_cast<double>(hist.n_bins - 1);
      if (!(u >= 0.0) || u > top) {
        clamped[b] += std::abs(w);
        u = std::isnan(u) || u < 0.0 ? 0.0 : top;
      }
      const auto j = std::min(static_cast<std::size_t>(u), hist.n_bins - 2);
      const double f = u - static_cast<double>(j);
      target[j] += (1.0 - f) * w;
      target[j + 1] += f * w;
    };
    for (const auto& run : runs) {
      if (run.cluster % nb != b) continue;
      for (std::size_t i = run.begin; i < run.end; ++i) {
        const double* u = nu.coords.data() + i * static_cast<std::size_t>(d);
        const double w = nu.weights[i];
        const double r = norm(std::span<const double>(u, static_cast<std::size_t>(d)));
        deposit(fh, std::log(r), w * angular(u));
        if (!opt.with_psi) continue;
        RandomStream rs = RandomStream::derive(opt.seed, {stream_tag::psi, i});
        const double a = std::exp(sampler.draw(rs, bb.data()));
        for (int k = 0; k < d; ++k) {
          au[static_cast<std::size_t>(k)] = a * u[k];
          aub[static_cast<std::size_t>(k)] = a * u[k] + bb[static_cast<std::size_t>(k)];
        }
        const double l1 = std::log(norm(au)), l2 = std::log(norm(aub));
        deposit(hist.psi[b], l1, w * angular(au.data()));
        deposit(hist.psi[b], l2, -w * angular(aub.data()));
        hist.shifts[b].push_back(w);
        hist.shifts[b].push_back(std::isfinite(l2) ? l2 - l1 : -kInf);
      }
    }
  });
  for (double c : clamped) hist.clamped += c;
  return hist;
}

/// Monte Carlo grid: estimate with batch standard errors and per-batch values.
struct McGrid {
  GridFn est;
  /// batch[b][i]: contribution of batch b at grid point i.
  std::vector<Vec> batch;
};

namespace detail {

inline McGrid convolve(const std::vector<Vec>& hist_batches, const LogHistogram& hist, const RadialProfile& p,
                       const GridFn& x_grid, int workers) {
  McGrid out;
  out.est = x_grid;
  const std::size_t nx = x_grid.size(), nb = hist_batches.size();
  const auto step = static_cast<long>(std::llround(x_grid.dx / hist.h));
  const auto m0 = static_cast<long>(std::llround((x_grid.x0 - hist.l0) / hist.h));
  // Kernel at offsets k = j - m_i in [-(m_max), n_bins).
  const long m_max = m0 + step * static_cast<long>(nx - 1);
  const long k_lo = -m_max, k_hi = static_cast<long>(hist.n_bins) - m0;
  Vec kern(static_cast<std::size_t>(k_hi - k_lo + 1));
  for (long k = k_lo; k <= k_hi; ++k) kern[static_cast<std::size_t>(k - k_lo)] = p(static_cast<double>(k) * hist.h);
  out.batch.assign(nb, Vec(nx, 0.0));
  parallel_for(nb, workers, [&](std::size_t b) {
    const Vec& hb = hist_batches[b];
    for (std::size_t i = 0; i < nx; ++i) {
      const long m = m0 + step * static_cast<long>(i);
      double s = 0.0;
      for (std::size_t j = 0; j < hist.n_bins; ++j) {
        if (hb[j] == 0.0) continue;
        s += hb[j] * kern[static_cast<std::size_t>(static_cast<long>(j) - m - k_lo)];
      }
      out.batch[b][i] = s;
    }
  });
  out.est.stderr_.assign(nx, 0.0);
  Vec col(nb);
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t b = 0; b < nb; ++b) col[b] = out.batch[b][i];
    auto e = stats::cluster_sum(col);
    out.est.values[i] = e.value;
    out.est.stderr_[i] = e.stderr_;
  }
  return out;
}

/// sum_j hist[j] p(l_j - x) at an arbitrary x.
inline double convolve_at(const Vec& hb, const LogHistogram& hist, const RadialProfile& p, double x) {
  double s = 0.0;
  for (std::size_t j = 0; j < hist.n_bins; ++j)
    if (hb[j] != 0.0) s += hb[j] * p(hist.l(j) - x);
  return s;
}

/// Nodes and weights of a rule for E h(Y), Y ~ mu bar.
inline std::pair<Vec, Vec> y_rule(const ALaw& law) {
  if (const auto* l = std::get_if<LogNormalA>(&law)) {
    auto r = gauss_hermite_prob(48);
    Vec nodes(r.nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = -l->s * r.nodes[i];
    return {nodes, r.weights};
  }
  if (has_finite_support(law)) {
    auto st = step_law(law);
    Vec nodes(st.values.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = -st.values[i];
    return {nodes, st.probs};
  }
  if (const auto* e = std::get_if<ShiftedExpMixA>(&law)) {
    // Gauss-Laguerre-free: midpoint-refined panels on [0, 40/k] for each branch.
    const int n = 400;
    const double k = e->rate, width = 40.0 / k / n;
    Vec nodes, weights;
    for (int i = 0; i < n; ++i) {
      const double t = (i + 0.5) * width;
      const double w = k * std::exp(-k * t) * width;
      nodes.push_back(1.0 / k - t);
      weights.push_back(e->weight * w);
      nodes.push_back(t - 1.0 / k);
      weights.push_back((1.0 - e->weight) * w);
    }
    return {nodes, weights};
  }
  throw Error(ErrorKind::InvalidConfig, "no Y rule for this a_law");
}

}  // namespace detail

/// f_phi(x) = int phi(e^{-x} u) nu(du) on x_grid, with batch standard errors.
inline McGrid estimate_f_phi(const MuSpec& spec, const PointCloudMeasure& nu, const RadialTestFn& phi,
                             const GridFn& x_grid, HistOptions opt = {}) {
  opt.with_psi = false;
  auto hist = build_log_histogram(spec, nu, x_grid, phi.zeta0, opt);
  return detail::convolve(hist.f, hist, phi.profile, x_grid, opt.workers);
}

/// psi_phi(x) = E[phi(e^{-x} A u) - phi(e^{-x}(A u + B))] nu(du), paired draws.
inline McGrid estimate_psi_phi(const MuSpec& spec, const PointCloudMeasure& nu, const RadialTestFn& phi,
                               const GridFn& x_grid, std::uint64_t seed, HistOptions opt = {}) {
  opt.with_psi = true;
  opt.seed = seed;
  auto hist = build_log_histogram(spec, nu, x_grid, phi.zeta0, opt);
  return detail::convolve(hist.psi, hist, phi.profile, x_grid, opt.workers);
}

// ---------------------------------------------------------------------------
// Cross-check of C+.
// ---------------------------------------------------------------------------

enum class DecayModel { Exponential, Power };

struct DecayFit {
  bool ok = false;
  double log_c = 0.0;
  /// Exponential rate or power exponent.
  double rate = 0.0;
  double sign = 1.0;
  std::size_t points = 0;
};

struct CrossvalOptions {
  double gamma = 1.0;
  /// Grid for f_phi and psi_phi; the plateau window is its last 40 % of positive x.
  double x_min = -10.0;
  double x_max = 10.0;
  double dx = 0.05;
  /// |x| range for the decay fits.
  double fit_lo = 3.0;
  double fit_hi = 10.0;
  DecayModel decay = DecayModel::Exponential;
  Vec z_grid = {std::exp(3.0), std::exp(4.0), std::exp(5.0), std::exp(6.0), std::exp(7.0)};
  double rel_tol = 0.20;
  /// Plateau drift allowance beyond 3 standard errors, relative to the plateau.
  double plateau_rel_drift = 0.02;
  HistOptions hist;
  TailOptions tail;
};

struct CrossvalReport {
  double gamma = 1.0;
  double sigma2 = 1.0;
  stats::Estimate J_psi;
  stats::Estimate K_psi;
  double K_window = 0.0;
  double K_tail = 0.0;
  DecayFit fit_left, fit_right;
  stats::Estimate T_potential;
  stats::Estimate T_plateau;
  stats::Estimate plateau_drift;
  bool plateau_ok = false;
  double denominator = 0.0;
  stats::Estimate cplus_pot;
  stats::Estimate cplus_mc;
  double chi2_p_value = 1.0;
  double rel_diff_T = 0.0;
  double rel_diff_cplus = 0.0;
  double rel_tol = 0.2;
  /// max |z| of f - mu bar * f + psi over interior points.
  double poisson_max_z = 0.0;
  /// max |z| of psi_phi - r * psi_zeta over interior points.
  double identity_max_z = 0.0;
  stats::Estimate fubini;
  double clamped_mass = 0.0;
  /// f at the left end of the grid (tends to 0).
  stats::Estimate f_left;
  McGrid f_phi;
  McGrid psi_phi;

  bool positive99() const {
    return cplus_pot.value - 2.576 * cplus_pot.stderr_ > 0 && cplus_mc.value - 2.576 * cplus_mc.stderr_ > 0;
  }
  /// Throws NoPlateau or InconsistentEstimates.
  void check() const {
    if (!plateau_ok)
      throw Error(ErrorKind::NoPlateau, "f_phi drifts by " + std::to_string(plateau_drift.value) +
                                            " across the plateau window (se " + std::to_string(plateau_drift.stderr_) + ")");
    if (rel_diff_T > rel_tol || rel_diff_cplus > rel_tol)
      throw Error(ErrorKind::InconsistentEstimates,
                  "potential and Monte Carlo routes disagree (T: " + std::to_string(rel_diff_T) +
                      ", C+: " + std::to_string(rel_diff_cplus) + ")");
  }
};

namespace detail {

/// Weighted fit of log|psi| against |x| (exponential) or log|x| (power) on one side.
inline DecayFit fit_decay(const GridFn& g, double lo, double hi, int side, DecayModel model) {
  DecayFit fit;
  Vec xs, ys, ws;
  double sgn = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.x(i) * side;
    if (x < lo || x > hi) continue;
    const double v = g.values[i], se = g.stderr_[i];
    if (!(std::abs(v) > 2.0 * se) || v == 0.0) continue;
    xs.push_back(model == DecayModel::Exponential ? x : std::log(x));
    ys.push_back(std::log(std::abs(v)));
    ws.push_back(se > 0 ? (v * v) / (se * se) : 1.0);
    sgn += v;
  }
  fit.points = xs.size();
  if (xs.size() < 3) return fit;
  auto line = stats::fit_line(xs, ys, ws);
  if (!(line.slope < 0)) return fit;
  fit.ok = true;
  fit.log_c = line.intercept;
  fit.rate = -line.slope;
  fit.sign = sgn >= 0 ? 1.0 : -1.0;
  return fit;
}

/// (int_X^inf psi, int_X^inf |x| psi) for the fitted model beyond |x| = X.
inline std::pair<double, double> tail_moments(const DecayFit& f, double X, DecayModel model) {
  if (!f.ok) return {0.0, 0.0};
  const double c = f.sign * std::exp(f.log_c);
  if (model == DecayModel::Exponential) {
    const double z = f.rate, e = std::exp(-z * X);
    return {c * e / z, c * e * (X / z + 1.0 / (z * z))};
  }
  const double chi = f.rate;
  if (chi <= 2.0) return {kInf, kInf};
  return {c * std::pow(X, 1.0 - chi) / (chi - 1.0), c * std::pow(X, 2.0 - chi) / (chi - 2.0)};
}

}  // namespace detail

/// Compares the plateau of f_Phi with -2 K(psi_Phi)/sigma^2 and C+ from the
/// potential route with C+ from the annuli.
inline CrossvalReport cplus_crosscheck(const MuSpec& spec, const PointCloudMeasure& nu, const CrossvalOptions& opt) {
  if (lattice_span(spec.a_law) > 0)
    throw Error(ErrorKind::InvalidConfig, "the potential cross-check needs an aperiodic a_law");
  CrossvalReport rep;
  rep.gamma = opt.gamma;
  rep.sigma2 = sigma2(spec.a_law);
  rep.rel_tol = opt.rel_tol;
  const RadialTestFn phi = build_phi(spec, opt.gamma);
  const RadialProfile zeta = RadialProfile::zeta(opt.gamma);
  GridFn grid = GridFn::uniform(opt.x_min, opt.x_max, opt.dx);
  HistOptions ho = opt.hist;
  ho.with_psi = true;
  auto hist = build_log_histogram(spec, nu, grid, phi.zeta0, ho);
  rep.clamped_mass = hist.clamped;
  rep.f_phi = detail::convolve(hist.f, hist, phi.profile, grid, ho.workers);
  rep.psi_phi = detail::convolve(hist.psi, hist, phi.profile, grid, ho.workers);
  const auto& F = rep.f_phi;
  const auto& P = rep.psi_phi;
  const std::size_t nb = hist.f.size(), nx = grid.size();
  rep.f_left = {F.est.values.front(), F.est.stderr_.front()};

  // J and K per batch by the trapezoid rule.
  auto trap = [&](const Vec& v, bool moment) {
    double s = 0.0;
    for (std::size_t i = 0; i < nx; ++i) {
      const double wgt = (i == 0 || i + 1 == nx) ? 0.5 : 1.0;
      s += wgt * v[i] * (moment ? grid.x(i) : 1.0);
    }
    return s * grid.dx;
  };
  Vec jb(nb), kb(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    jb[b] = trap(P.batch[b], false);
    kb[b] = trap(P.batch[b], true);
  }
  rep.fit_right = detail::fit_decay(P.est, opt.fit_lo, opt.fit_hi, +1, opt.decay);
  rep.fit_left = detail::fit_decay(P.est, opt.fit_lo, opt.fit_hi, -1, opt.decay);
  const auto [jr, kr] = detail::tail_moments(rep.fit_right, opt.x_max, opt.decay);
  const auto [jl, kl] = detail::tail_moments(rep.fit_left, -opt.x_min, opt.decay);
  // Left tail: x = -|x|, so its first moment enters with a minus sign.
  const double j_tail = jr + jl, k_tail = kr - kl;
  auto jw = stats::cluster_sum(jb), kw = stats::cluster_sum(kb);
  rep.K_window = kw.value;
  rep.K_tail = k_tail;
  // Tail model uncertainty: half the correction.
  rep.J_psi = {jw.value + j_tail, std::hypot(jw.stderr_, 0.5 * j_tail)};
  rep.K_psi = {kw.value + k_tail, std::hypot(kw.stderr_, 0.5 * k_tail)};
  rep.T_potential = {-2.0 * rep.K_psi.value / rep.sigma2, 2.0 * rep.K_psi.stderr_ / rep.sigma2};

  // Plateau: last 40 % of the positive grid.
  std::vector<std::size_t> win;
  for (std::size_t i = 0; i < nx; ++i)
    if (grid.x(i) >= 0.6 * opt.x_max - 1e-12) win.push_back(i);
  if (win.size() < 3) throw Error(ErrorKind::InvalidConfig, "plateau window has fewer than 3 grid points");
  double xbar = 0.0;
  for (auto i : win) xbar += grid.x(i);
  xbar /= static_cast<double>(win.size());
  double sxx = 0.0;
  for (auto i : win) sxx += (grid.x(i) - xbar) * (grid.x(i) - xbar);
  const double width = grid.x(win.back()) - grid.x(win.front());
  Vec pb(nb), db(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    double m = 0.0, sxy = 0.0;
    for (auto i : win) {
      m += F.batch[b][i];
      sxy += (grid.x(i) - xbar) * F.batch[b][i];
    }
    pb[b] = m / static_cast<double>(win.size());
    db[b] = sxy / sxx * width;
  }
  rep.T_plateau = stats::cluster_sum(pb);
  rep.plateau_drift = stats::cluster_sum(db);
  rep.plateau_ok = std::abs(rep.plateau_drift.value) <=
                   3.0 * rep.plateau_drift.stderr_ + opt.plateau_rel_drift * std::abs(rep.T_plateau.value);

  rep.denominator = phi.profile.integral();
  rep.cplus_pot = {rep.T_potential.value / rep.denominator, rep.T_potential.stderr_ / rep.denominator};
  auto tail = estimate_cplus(nu, opt.z_grid, 0.0, opt.tail);
  rep.cplus_mc = tail.c_plus;
  rep.chi2_p_value = tail.p_value;
  rep.rel_diff_T = std::abs(rep.T_plateau.value - rep.T_potential.value) / std::abs(rep.T_plateau.value);
  rep.rel_diff_cplus = std::abs(rep.cplus_pot.value - rep.cplus_mc.value) / std::abs(rep.cplus_mc.value);

  // Poisson equation on the cloud: f - mu bar * f + psi = 0, on a coarse interior subset.
  {
    const auto [nodes, weights] = detail::y_rule(spec.a_law);
    double ymax = 0.0;
    for (double y : nodes) ymax = std::max(ymax, std::abs(y));
    Vec diff(nb);
    for (double x = opt.x_min + 2.0; x <= opt.x_max - 2.0 + 1e-9; x += 2.0) {
      const auto i = static_cast<std::size_t>(std::llround((x - grid.x0) / grid.dx));
      parallel_for(nb, ho.workers, [&](std::size_t b) {
        double mf = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k)
          mf += weights[k] * detail::convolve_at(hist.f[b], hist, phi.profile, grid.x(i) + nodes[k]);
        diff[b] = F.batch[b][i] - mf + P.batch[b][i];
      });
      auto e = stats::cluster_sum(diff);
      if (e.stderr_ > 0) rep.poisson_max_z = std::max(rep.poisson_max_z, std::abs(e.value) / e.stderr_);
    }
  }

  // psi_phi = r * psi_zeta, the convolution done on the grid.
  {
    auto pz = detail::convolve(hist.psi, hist, zeta, grid, ho.workers);
    const double R = std::min(r_support_radius(spec.a_law), 12.0);
    const auto kr_n = static_cast<long>(std::ceil(R / grid.dx));
    Vec rw(static_cast<std::size_t>(2 * kr_n + 1));
    for (long k = -kr_n; k <= kr_n; ++k)
      rw[static_cast<std::size_t>(k + kr_n)] = r_kernel(spec.a_law, static_cast<double>(k) * grid.dx) * grid.dx;
    Vec diff(nb);
    for (std::size_t i = static_cast<std::size_t>(kr_n); i + static_cast<std::size_t>(kr_n) < nx; i += 20) {
      for (std::size_t b = 0; b < nb; ++b) {
        double conv = 0.0;
        for (long k = -kr_n; k <= kr_n; ++k)
          conv += rw[static_cast<std::size_t>(k + kr_n)] * pz.batch[b][static_cast<std::size_t>(static_cast<long>(i) - k)];
        diff[b] = P.batch[b][i] - conv;
      }
      auto e = stats::cluster_sum(diff);
      if (e.stderr_ > 0) rep.identity_max_z = std::max(rep.identity_max_z, std::abs(e.value) / e.stderr_);
    }
  }

  // Fubini: int |p(s) - p(s + Delta)| ds tabulated in Delta, summed over the paired shifts.
  {
    const double ds = 0.01, smax = 80.0;
    const auto ns = static_cast<std::size_t>(2 * smax / ds) + 1;
    Vec ptab(ns);
    for (std::size_t k = 0; k < ns; ++k) ptab[k] = phi.profile(-smax + static_cast<double>(k) * ds);
    auto D = [&](double delta) {
      if (!std::isfinite(delta)) return 2.0 * rep.denominator;
      const auto sh = static_cast<long>(std::llround(std::abs(delta) / ds));
      double s = 0.0;
      for (std::size_t k = 0; k < ns; ++k) {
        const long kk = static_cast<long>(k) + sh;
        const double other = kk < static_cast<long>(ns) ? ptab[static_cast<std::size_t>(kk)] : 0.0;
        s += std::abs(ptab[k] - other);
      }
      return s * ds;
    };
    // Table D on a Delta grid; interpolate.
    const double dd = 0.02, dmax = 60.0;
    Vec dtab;
    for (double dl = 0.0; dl <= dmax + 1e-9; dl += dd) dtab.push_back(D(dl));
    auto Dint = [&](double delta) {
      if (!std::isfinite(delta)) return 2.0 * rep.denominator;
      const double u = std::abs(delta) / dd;
      if (u >= static_cast<double>(dtab.size() - 1)) return 2.0 * rep.denominator;
      const auto j = static_cast<std::size_t>(u);
      const double f = u - static_cast<double>(j);
      return dtab[j] * (1 - f) + dtab[j + 1] * f;
    };
    Vec fb(nb, 0.0);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t k = 0; k + 1 < hist.shifts[b].size(); k += 2) fb[b] += hist.shifts[b][k] * Dint(hist.shifts[b][k + 1]);
    rep.fubini = stats::cluster_sum(fb);
  }
  return rep;
}

}  // namespace critaffine

#endif  // CRITAFFINE_CROSSVAL_HPP
