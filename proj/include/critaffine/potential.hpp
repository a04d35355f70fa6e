#ifndef CRITAFFINE_POTENTIAL_HPP
#define CRITAFFINE_POTENTIAL_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "stats.hpp"

namespace critaffine {

// ---------------------------------------------------------------------------
// Uniform grids.
// ---------------------------------------------------------------------------

/// Real function on the uniform grid x0 + i dx.
struct GridFn {
  double x0 = 0.0;
  double dx = 1.0;
  Vec values;
  /// Optional per-point standard errors (Monte Carlo grids).
  Vec stderr_;
  /// Known scalars (J, K, sigma2, tolerances, ...).
  std::map<std::string, double> tags;

  static GridFn symmetric(double xmax, double dx) {
    GridFn g;
    const auto half = static_cast<long>(std::llround(xmax / dx));
    g.x0 = -static_cast<double>(half) * dx;
    g.dx = dx;
    g.values.assign(static_cast<std::size_t>(2 * half + 1), 0.0);
    return g;
  }
  static GridFn uniform(double lo, double hi, double dx) {
    GridFn g;
    const auto n = static_cast<long>(std::llround((hi - lo) / dx));
    g.x0 = lo;
    g.dx = dx;
    g.values.assign(static_cast<std::size_t>(n + 1), 0.0);
    return g;
  }

  std::size_t size() const { return values.size(); }
  double x(std::size_t i) const { return x0 + static_cast<double>(i) * dx; }
  double x_max() const { return x(size() - 1); }

  /// Trapezoid integral of values.
  double integral() const {
    if (size() < 2) return 0.0;
    double s = 0.5 * (values.front() + values.back());
    for (std::size_t i = 1; i + 1 < size(); ++i) s += values[i];
    return s * dx;
  }
  /// Trapezoid integral of x * values.
  double first_moment() const {
    if (size() < 2) return 0.0;
    double s = 0.5 * (x(0) * values.front() + x(size() - 1) * values.back());
    for (std::size_t i = 1; i + 1 < size(); ++i) s += x(i) * values[i];
    return s * dx;
  }
  /// Linear interpolation (0 outside the grid).
  double at(double t) const {
    const double u = (t - x0) / dx;
    if (u < 0.0 || u > static_cast<double>(size() - 1)) return 0.0;
    const auto i = std::min(static_cast<std::size_t>(u), size() - 2);
    const double f = u - static_cast<double>(i);
    return values[i] * (1.0 - f) + values[i + 1] * f;
  }
};

/// CSV with a one-line JSON header: "# {...}", then "x,value[,stderr]".
inline void write_gridfn_csv(const GridFn& g, const std::string& path, nlohmann::ordered_json header = {}) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  if (header.is_null()) header = nlohmann::ordered_json::object();
  for (const auto& [k, v] : g.tags) header[k] = v;
  out << "# " << header.dump() << "\n";
  const bool se = g.stderr_.size() == g.size();
  out << (se ? "x,value,stderr\n" : "x,value\n");
  char buf[96];
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (se)
      std::snprintf(buf, sizeof buf, "%.10g,%.17g,%.17g\n", g.x(i), g.values[i], g.stderr_[i]);
    else
      std::snprintf(buf, sizeof buf, "%.10g,%.17g\n", g.x(i), g.values[i]);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path);
}

inline GridFn read_gridfn_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string line;
  Vec xs, vs;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line[0] != '-' && line[0] != '.' && !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    std::stringstream ss(line);
    std::string a, b;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    try {
      xs.push_back(std::stod(a));
      vs.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Io, path + ": malformed row '" + line + "'");
    }
  }
  if (xs.size() < 2) throw Error(ErrorKind::Io, path + ": need at least two grid points");
  GridFn g;
  g.x0 = xs.front();
  g.dx = (xs.back() - xs.front()) / static_cast<double>(xs.size() - 1);
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::abs(xs[i] - g.x(i)) > 1e-6 * g.dx) throw Error(ErrorKind::Io, path + ": grid is not uniform");
  g.values = std::move(vs);
  return g;
}

// ---------------------------------------------------------------------------
// Source functions psi with their transforms psi_hat(t) = int e^{i t x} psi(x) dx.
// ---------------------------------------------------------------------------

struct PsiFunction {
  std::string name;
  std::function<double(double)> value;
  std::function<cplx(double)> hat;
  /// Exact J and K when known in closed form.
  std::optional<double> J;
  std::optional<double> K;
  /// psi vanishes outside [support_lo, support_hi].
  double support_lo = -kInf;
  double support_hi = kInf;
};

namespace detail {

/// 1 - e^{iu} without cancellation.
inline cplx one_minus_expi(double u) {
  const double h = std::sin(0.5 * u);
  return {2.0 * h * h, -std::sin(u)};
}

/// (sin(u)/u)^2 with the removable point.
inline double sinc2(double u) {
  if (std::abs(u) < 1e-4) return 1.0 - u * u / 3.0;
  const double s = std::sin(u) / u;
  return s * s;
}

}  // namespace detail

/// r(x) = E|Y - x| - |x| for Y ~ mu bar.
inline double r_fn(const MuSpec& spec, double x) { return r_kernel(spec.a_law, x); }

/// mu bar hat(theta).
inline cplx char_fn(const MuSpec& spec, double theta) { return char_fn(spec.a_law, theta); }

/// r_hat(theta) = -2 (mu_hat(theta) - 1) / theta^2.
inline cplx r_hat(const ALaw& law, double theta) {
  if (theta == 0.0) return {sigma2(law), 0.0};
  return 2.0 * one_minus_char_fn(law, theta) / (theta * theta);
}

inline PsiFunction psi_r(const ALaw& law, double scale = 1.0) {
  PsiFunction p;
  p.name = scale == 1.0 ? "r" : "r*" + std::to_string(scale);
  p.value = [law, scale](double x) { return scale * r_kernel(law, x); };
  p.hat = [law, scale](double t) { return scale * r_hat(law, t); };
  p.J = scale * sigma2(law);
  p.K = scale * moment_y(law, 3) / 3.0;
  const double rad = r_support_radius(law);
  p.support_lo = -rad;
  p.support_hi = rad;
  return p;
}

/// psi(x) = r(x) - r(x - c): J = 0, K = -c J(r).
inline PsiFunction psi_rshift(const ALaw& law, double c) {
  PsiFunction p;
  p.name = "rshift:" + std::to_string(c);
  p.value = [law, c](double x) { return r_kernel(law, x) - r_kernel(law, x - c); };
  p.hat = [law, c](double t) { return r_hat(law, t) * detail::one_minus_expi(c * t); };
  p.J = 0.0;
  p.K = -c * sigma2(law);
  const double rad = r_support_radius(law);
  p.support_lo = std::min(-rad, c - rad);
  p.support_hi = std::max(rad, c + rad);
  return p;
}

/// mass * Normal(mean, scale^2) density.
inline PsiFunction psi_gaussian(double mean = 0.0, double scale = 1.0, double mass = 1.0) {
  PsiFunction p;
  p.name = "gaussian";
  p.value = [=](double x) {
    const double z = (x - mean) / scale;
    return mass * std::exp(-0.5 * z * z) / (scale * std::sqrt(2.0 * kPi));
  };
  p.hat = [=](double t) { return mass * std::exp(cplx(-0.5 * scale * scale * t * t, mean * t)); };
  p.J = mass;
  p.K = mass * mean;
  p.support_lo = mean - 40.0 * scale;
  p.support_hi = mean + 40.0 * scale;
  return p;
}

/// Piecewise-linear interpolant of a grid (zero outside); its transform is exact.
inline PsiFunction psi_from_grid(const GridFn& g) {
  PsiFunction p;
  p.name = "file";
  p.value = [g](double x) { return g.at(x); };
  p.hat = [g](double t) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.values[i] * std::exp(cplx(0.0, t * g.x(i)));
    return s * g.dx * detail::sinc2(0.5 * t * g.dx);
  };
  double j = 0.0, k = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    j += g.values[i];
    k += g.values[i] * g.x(i);
  }
  p.J = j * g.dx;
  p.K = k * g.dx;
  p.support_lo = g.x0;
  p.support_hi = g.x_max();
  return p;
}

inline PsiFunction psi_combine(double a, const PsiFunction& f, double b, const PsiFunction& h) {
  PsiFunction p;
  p.name = "combo";
  p.value = [=](double x) { return a * f.value(x) + b * h.value(x); };
  p.hat = [=](double t) { return a * f.hat(t) + b * h.hat(t); };
  if (f.J && h.J) p.J = a * *f.J + b * *h.J;
  if (f.K && h.K) p.K = a * *f.K + b * *h.K;
  p.support_lo = std::min(f.support_lo, h.support_lo);
  p.support_hi = std::max(f.support_hi, h.support_hi);
  return p;
}

/// psi_hat(theta) by adaptive quadrature of psi over its support.
inline cplx transform_numeric(const std::function<double(double)>& f, double theta, double lo, double hi,
                              double tol = 1e-12) {
  const int panels = std::max(1, static_cast<int>(std::ceil(std::abs(theta) * (hi - lo) / kPi)));
  auto re = integrate_adaptive([&](double x) { return f(x) * std::cos(theta * x); }, lo, hi, tol, 0.0, 200000,
                               panels);
  auto im = integrate_adaptive([&](double x) { return f(x) * std::sin(theta * x); }, lo, hi, tol, 0.0, 200000,
                               panels);
  return {re.value, im.value};
}

// ---------------------------------------------------------------------------
// Class F certificate.
// ---------------------------------------------------------------------------

struct FClassCert {
  double J = 0.0;
  double K = 0.0;
  /// Values read off psi_hat near 0 by central differences.
  double J_numeric = 0.0;
  double K_numeric = 0.0;
  /// Split radius: outside [-a, a] the ratio psi_hat/(1 - mu_hat) is integrated.
  double a = 0.0;
  /// Integral of |psi_hat(-t)/(1 - mu_hat(t))| over the checked range outside [-a, a].
  double integrability_bound = 0.0;
  /// Estimated remainder beyond the checked range.
  double tail_bound = 0.0;
  double checked_up_to = 0.0;
  double lattice_span = 0.0;
  bool lattice_period_handling = false;
  /// max_k |psi_hat(2 pi k / p)| over the checked cells (lattice only).
  double lattice_zero_residual = 0.0;
  Vec shell_integrals;
};

struct CertifyOptions {
  /// Number of dyadic shells (aperiodic) or period cells (lattice) to check.
  int shells = 14;
  double tol = 1e-9;
};

namespace detail {

/// Split radius a with the quartic term of 1 - mu_hat below 1e-3 of the quadratic.
inline double split_radius(const ALaw& law) {
  const double s2 = sigma2(law);
  const double m4 = moment_y(law, 4);
  double a = std::sqrt(12e-3 * s2 / m4);
  const double p = lattice_span(law);
  if (p > 0) a = std::min(a, 0.5 * kPi / p);
  return a;
}

}  // namespace detail

/// Certifies psi in F(mu bar): J, K from psi_hat near 0 and integrability of
/// psi_hat(-t)/(1 - mu_hat(t)) away from the origin.
inline FClassCert certify_F(const ALaw& law, const PsiFunction& psi, const CertifyOptions& opt = {}) {
  FClassCert cert;
  cert.lattice_span = lattice_span(law);
  cert.a = detail::split_radius(law);

  // Central differences on a shrinking step, Richardson-combined.
  auto jk = [&](double h) {
    const cplx p = psi.hat(h), m = psi.hat(-h);
    return std::pair{0.5 * (p + m).real(), (p - m).imag() / (2.0 * h)};
  };
  const double h = 1e-3 * std::min(1.0, cert.a);
  auto [j1, k1] = jk(h);
  auto [j2, k2] = jk(0.5 * h);
  cert.J_numeric = (4.0 * j2 - j1) / 3.0;
  cert.K_numeric = (4.0 * k2 - k1) / 3.0;
  const double jscale = std::max(1.0, std::abs(psi.hat(0.0)));
  cert.J = psi.J.value_or(cert.J_numeric);
  cert.K = psi.K.value_or(cert.K_numeric);
  if (std::abs(cert.J - cert.J_numeric) > 1e-6 * jscale || std::abs(cert.K - cert.K_numeric) > 1e-4 * jscale)
    throw Error(ErrorKind::NotInClass, "psi_hat near 0 disagrees with the declared J, K (J=" +
                                           std::to_string(cert.J_numeric) + ", K=" +
                                           std::to_string(cert.K_numeric) + ")");
  if (std::abs(cert.J) < 1e-10 * jscale) cert.J = 0.0;

  auto ratio = [&](double t) { return std::abs(psi.hat(-t) / one_minus_char_fn(law, t)); };
  const double p = cert.lattice_span;
  if (p > 0) {
    cert.lattice_period_handling = true;
    double hat_scale = 0.0;
    for (double t : {0.0, 0.5 * cert.a, cert.a}) hat_scale = std::max(hat_scale, std::abs(psi.hat(t)));
    hat_scale = std::max(hat_scale, 1e-300);
    for (int k = 1; k <= opt.shells; ++k) {
      const double zero = 2.0 * kPi * k / p;
      const double res = std::max(std::abs(psi.hat(zero)), std::abs(psi.hat(-zero)));
      cert.lattice_zero_residual = std::max(cert.lattice_zero_residual, res / hat_scale);
    }
    if (cert.lattice_zero_residual > 1e-10)
      throw Error(ErrorKind::LatticeZeroMismatch,
                  "psi_hat does not vanish at the zeros 2 pi k / p of 1 - mu_hat (relative residual " +
                      std::to_string(cert.lattice_zero_residual) + ")");
    // Period cells [(2k-1) pi/p, (2k+1) pi/p], both signs; cell 0 minus [-a, a].
    for (int k = 0; k < opt.shells; ++k) {
      const double lo = k == 0 ? cert.a : (2 * k - 1) * kPi / p;
      const double hi = (2 * k + 1) * kPi / p;
      double v = 0.0;
      for (double sgn : {1.0, -1.0}) {
        auto f = [&](double t) { return ratio(sgn * t); };
        // Split at the zero of 1 - mu_hat, where the ratio is continuous but kinked.
        const double mid = 2.0 * kPi * k / p;
        if (k > 0) {
          v += integrate_adaptive(f, lo, mid, opt.tol, 1e-8, 20000, 4, false).value;
          v += integrate_adaptive(f, mid, hi, opt.tol, 1e-8, 20000, 4, false).value;
        } else {
          v += integrate_adaptive(f, lo, hi, opt.tol, 1e-8, 20000, 4, false).value;
        }
      }
      if (!std::isfinite(v)) throw Error(ErrorKind::NotInClass, "psi_hat/(1 - mu_hat) is not integrable");
      cert.shell_integrals.push_back(v);
    }
    cert.checked_up_to = (2 * opt.shells - 1) * kPi / p;
  } else {
    double lo = cert.a;
    for (int k = 0; k < opt.shells; ++k) {
      const double hi = 2.0 * lo;
      double v = 0.0;
      for (double sgn : {1.0, -1.0})
        v += integrate_adaptive([&](double t) { return ratio(sgn * t); }, lo, hi, opt.tol, 1e-8, 20000,
                                std::max(4, static_cast<int>(hi - lo)), false)
                 .value;
      if (!std::isfinite(v)) throw Error(ErrorKind::NotInClass, "psi_hat/(1 - mu_hat) is not integrable");
      cert.shell_integrals.push_back(v);
      lo = hi;
    }
    cert.checked_up_to = lo;
  }
  for (double v : cert.shell_integrals) cert.integrability_bound += v;
  // Geometric tail from the last shells; fail when they do not shrink.
  const auto& s = cert.shell_integrals;
  const std::size_t n = s.size();
  const double last = s[n - 1], prev = s[n - 2];
  const double total = std::max(cert.integrability_bound, 1e-300);
  if (last <= 1e-14 * total) {
    cert.tail_bound = last;
  } else {
    // Lattice cells decay like k^-q, dyadic shells like 2^-q k.
    double q = 0.0;
    if (p > 0) {
      q = std::log(prev / last) / std::log((2.0 * n - 1) / (2.0 * n - 3));
      if (!(q > 1.05)) throw Error(ErrorKind::NotInClass, "psi_hat/(1 - mu_hat) does not decay over period cells");
      cert.tail_bound = last * (n - 0.5) / (q - 1.0);
    } else {
      const double ratio_last = last / prev;
      if (!(ratio_last < 0.95))
        throw Error(ErrorKind::NotInClass, "psi_hat/(1 - mu_hat) does not decay over dyadic shells");
      cert.tail_bound = last * ratio_last / (1.0 - ratio_last);
    }
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Recurrent potential.
// ---------------------------------------------------------------------------

enum class LambdaMethod {
  /// Direct lambda = 1 when J = 0, Richardson over lambda = 1 - 2^-k otherwise.
  Auto,
  Richardson,
  Direct,
};

struct QuadParams {
  double tol = 1e-6;
  int k_min = 4;
  int k_max = 12;
  LambdaMethod method = LambdaMethod::Auto;
  int max_panels = 400000;
  int workers = 1;
  /// Also evaluate the direct lambda = 1 integral when Richardson is used.
  bool cross_check = true;
};

struct PotentialPoint {
  double value = 0.0;
  /// Quadrature (direct) or extrapolation error estimate.
  double error = 0.0;
  /// Direct lambda = 1 value (NaN when not computed).
  double direct = std::numeric_limits<double>::quiet_NaN();
  /// Empirical order in sqrt(1 - lambda) of the lambda -> 1 convergence.
  double order = std::numeric_limits<double>::quiet_NaN();
};

/// Evaluates A^lambda psi and A psi pointwise.
///
/// A^lambda psi(x) = (1/2pi) int [J g_hat(-t) - e^{itx} psi_hat(-t)] / (1 - lambda mu_hat(t)) dt,
/// with g the standard Gaussian density for aperiodic laws and g = r / sigma^2
/// on a lattice (a Gaussian is not in F there). Only the real part of the
/// integrand survives the t -> -t symmetry, which removes the odd 1/t term.
/// Aperiodic laws: the first `near_field` terms of 1/(1 - lambda mu_hat) =
/// sum_n lambda^n mu_hat^n + ... are inverted in x-space. Lattice laws: the
/// integral is folded onto one period cell by Poisson summation.
class PotentialEvaluator {
 public:
  PotentialEvaluator(const ALaw& law, PsiFunction psi, const FClassCert& cert, QuadParams quad = {})
      : law_(law), psi_(std::move(psi)), cert_(cert), quad_(quad) {
    sigma2_ = sigma2(law_);
    p_ = lattice_span(law_);
    J_ = cert_.J;
    if (p_ > 0) {
      const double rad = r_support_radius(law_);
      g_value_ = [law = law_, s2 = sigma2_](double x) { return r_kernel(law, x) / s2; };
      g_lo_ = -rad;
      g_hi_ = rad;
      if (!std::isfinite(psi_.support_lo) || !std::isfinite(psi_.support_hi))
        throw Error(ErrorKind::NotInClass, "lattice potential needs psi with bounded support");
    } else {
      near_field_ = std::holds_alternative<ShiftedExpMixA>(law_) ? 2 : 1;
      theta_max_ = choose_theta_max();
    }
  }

  double theta_max() const { return theta_max_; }
  double truncation_bound() const { return truncation_bound_; }
  int near_field_terms() const { return near_field_; }
  std::string reference_g() const { return p_ > 0 ? "r/sigma2" : "standard_gaussian"; }

  /// A^lambda psi(x) for lambda in (0, 1]; returns value and quadrature error.
  std::pair<double, double> value_lambda(double x, double lambda, double tol) const {
    if (p_ > 0) return lattice_value(x, lambda, tol);
    return aperiodic_value(x, lambda, tol);
  }

  PotentialPoint evaluate(double x) const {
    PotentialPoint pt;
    const bool richardson =
        quad_.method == LambdaMethod::Richardson || (quad_.method == LambdaMethod::Auto && J_ != 0.0);
    if (!richardson) {
      auto [v, e] = value_lambda(x, 1.0, quad_.tol);
      pt.value = v;
      pt.error = e;
      pt.direct = v;
      return pt;
    }
    extrapolate(x, pt);
    if (quad_.cross_check) pt.direct = value_lambda(x, 1.0, quad_.tol).first;
    return pt;
  }

 private:
  void extrapolate(double x, PotentialPoint& pt) const {
    const int n = quad_.k_max - quad_.k_min + 1;
    if (n < 2) throw Error(ErrorKind::InvalidConfig, "Richardson needs at least two lambda values");
    // The sqrt(1 - lambda) expansion has coefficients growing like |x|^j, so the
    // window slides until sqrt(2 (1 - lambda)) |x| / sigma stays below 0.1.
    const int k_far = static_cast<int>(std::ceil(std::log2(200.0 * x * x / sigma2_)));
    const int shift = std::max(0, k_far - quad_.k_max);
    const double inner_tol = 1e-2 * quad_.tol;
    std::vector<Vec> t(n);
    Vec raw(n);
    for (int i = 0; i < n; ++i) {
      const double lambda = 1.0 - std::ldexp(1.0, -(quad_.k_min + shift + i));
      raw[i] = value_lambda(x, lambda, inner_tol).first;
    }
    // Neville-Richardson in h = sqrt(1 - lambda); consecutive h differ by sqrt(2).
    const double r = std::sqrt(2.0);
    double best = raw[n - 1], best_err = kInf;
    for (int i = 0; i < n; ++i) {
      t[i].resize(i + 1);
      t[i][0] = raw[i];
      for (int j = 1; j <= i; ++j) {
        const double f = std::pow(r, j);
        t[i][j] = t[i][j - 1] + (t[i][j - 1] - t[i - 1][j - 1]) / (f - 1.0);
      }
      if (i >= 1) {
        const double err = std::abs(t[i][i] - t[i - 1][i - 1]);
        if (err < best_err) {
          best_err = err;
          best = t[i][i];
        }
      }
    }
    if (n >= 3) {
      const double d1 = raw[n - 2] - raw[n - 3], d2 = raw[n - 1] - raw[n - 2];
      if (d1 != 0.0 && d2 != 0.0) pt.order = std::log(std::abs(d1 / d2)) / std::log(r);
    }
    if (!std::isfinite(best) || best_err > std::sqrt(quad_.tol) * (1.0 + std::abs(best)))
      throw Error(ErrorKind::ExtrapolationDivergence,
                  "Richardson over lambda = 1 - 2^-k did not settle at x = " + std::to_string(x) +
                      " (error estimate " + std::to_string(best_err) + ")");
    pt.value = best;
    pt.error = best_err;
  }

  /// (1/pi) int_0^{pi/p} Re[N(t) / (1 - lambda mu_hat(t))] dt with
  /// N(t) = p sum_n c_n e^{i t n p}, c_n = J g(-np) - psi(x - np).
  std::pair<double, double> lattice_value(double x, double lambda, double tol) const {
    const double p = p_;
    const long n_lo = static_cast<long>(std::floor(std::min((x - psi_.support_hi) / p, -g_hi_ / p))) - 1;
    const long n_hi = static_cast<long>(std::ceil(std::max((x - psi_.support_lo) / p, -g_lo_ / p))) + 1;
    std::vector<std::pair<double, double>> terms;  // (n p, c_n)
    for (long n = n_lo; n <= n_hi; ++n) {
      const double np = static_cast<double>(n) * p;
      const double c = (J_ != 0.0 ? J_ * g_value_(-np) : 0.0) - psi_.value(x - np);
      if (c != 0.0) terms.emplace_back(np, c);
    }
    auto integrand = [&](double t) {
      t = std::max(t, 1e-7 / p);
      // sum c_n = 0 exactly, so Re N = -2 p sum c_n sin^2(t n p / 2).
      double re = 0.0, im = 0.0;
      for (const auto& [np, c] : terms) {
        const double h = std::sin(0.5 * t * np);
        re -= 2.0 * c * h * h;
        im += c * std::sin(t * np);
      }
      const cplx num(p * re, p * im);
      const cplx den = (1.0 - lambda) + lambda * one_minus_char_fn(law_, t);
      return (num / den).real();
    };
    auto res = integrate_adaptive(integrand, 0.0, kPi / p, tol * kPi, 0.0, quad_.max_panels, 8);
    return {res.value / kPi, res.error / kPi};
  }

  /// Numerator of the aperiodic integrand: J g_hat(-t) - e^{itx} psi_hat(-t).
  cplx numerator(double x, double t) const {
    const cplx ph = psi_.hat(-t) * std::exp(cplx(0.0, t * x));
    return (J_ != 0.0 ? J_ * std::exp(-0.5 * t * t) : 0.0) - ph;
  }

  std::pair<double, double> aperiodic_value(double x, double lambda, double tol) const {
    // x-space terms n < near_field of sum lambda^n mu_hat^n.
    double near = (J_ != 0.0 ? J_ / std::sqrt(2.0 * kPi) : 0.0) - psi_.value(x);
    if (near_field_ >= 2) {
      const double eg = J_ != 0.0 ? expect_y([](double y) { return std::exp(-0.5 * y * y) / std::sqrt(2.0 * kPi); })
                                  : 0.0;
      const double ep = expect_y([&](double y) { return psi_.value(x + y); });
      near += lambda * (J_ * eg - ep);
    }
    const int nf = near_field_;
    auto integrand = [&](double t) {
      t = std::max(t, 1e-6);
      const cplx mu = char_fn(law_, t);
      cplx mun = std::pow(lambda, nf) * mu;
      for (int k = 1; k < nf; ++k) mun *= mu;
      const cplx den = (1.0 - lambda) + lambda * one_minus_char_fn(law_, t);
      return (numerator(x, t) * mun / den).real();
    };
    const int panels = std::clamp(static_cast<int>(std::ceil(theta_max_ * std::max(std::abs(x), 1.0) / kPi)), 8, 4000);
    auto res = integrate_adaptive(integrand, 0.0, theta_max_, tol * kPi, 0.0, quad_.max_panels, panels);
    return {near + res.value / kPi, res.error / kPi + truncation_bound_};
  }

  /// E f(Y) for Y ~ mu bar.
  template <class F>
  double expect_y(F&& f) const {
    if (const auto* e = std::get_if<ShiftedExpMixA>(&law_)) {
      const double k = e->rate;
      // Y = 1/k - E with probability w, E - 1/k otherwise.
      auto left = integrate_adaptive([&](double u) { return f(1.0 / k - u) * k * std::exp(-k * u); }, 0.0,
                                     60.0 / k, 1e-3 * quad_.tol, 0.0, 20000, 16);
      auto right = integrate_adaptive([&](double u) { return f(u - 1.0 / k) * k * std::exp(-k * u); }, 0.0,
                                      60.0 / k, 1e-3 * quad_.tol, 0.0, 20000, 16);
      return e->weight * left.value + (1.0 - e->weight) * right.value;
    }
    if (const auto* l = std::get_if<LogNormalA>(&law_)) {
      static const HermiteRule rule = gauss_hermite_prob(96);
      double s = 0.0;
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * f(-l->s * rule.nodes[i]);
      return s;
    }
    const auto st = step_law(law_);
    double s = 0.0;
    for (std::size_t i = 0; i < st.values.size(); ++i) s += st.probs[i] * f(-st.values[i]);
    return s;
  }

  /// Smallest dyadic Theta whose neglected tail is below 1e-2 * tol.
  double choose_theta_max() {
    const int nf = near_field_;
    auto envelope = [&](double t) {
      double m = 0.0;
      for (int j = 0; j < 8; ++j) {
        const double u = t * (1.0 + j / 8.0);
        const double mu = std::abs(char_fn(law_, u));
        const double num = std::abs(J_) * std::exp(-0.5 * u * u) + std::abs(psi_.hat(-u));
        const double den = std::max(std::abs(one_minus_char_fn(law_, u)), 1e-300);
        m = std::max(m, num * std::pow(mu, nf) / den);
      }
      return m;
    };
    const double target = 1e-2 * quad_.tol;
    double theta = 8.0 / std::sqrt(sigma2_);
    for (int it = 0; it < 20; ++it) {
      const double e1 = envelope(theta), e2 = envelope(2.0 * theta);
      double tail;
      if (e1 == 0.0) {
        tail = 0.0;
      } else if (e2 == 0.0) {
        tail = e1 * theta * 1e-3;
      } else {
        const double q = std::log(e1 / e2) / std::log(2.0);
        tail = q > 1.2 ? e1 * theta / (q - 1.0) : kInf;
        // Super-polynomial decay: the doubling step itself bounds the tail.
        if (q > 30.0) tail = e2 * theta;
      }
      if (tail < target) {
        truncation_bound_ = tail / kPi;
        return theta;
      }
      theta *= 2.0;
    }
    throw Error(ErrorKind::QuadratureFailure, "could not bound the high-frequency tail of the potential integrand");
  }

  ALaw law_;
  PsiFunction psi_;
  FClassCert cert_;
  QuadParams quad_;
  double sigma2_ = 1.0;
  double p_ = 0.0;
  double J_ = 0.0;
  std::function<double(double)> g_value_;
  double g_lo_ = 0.0, g_hi_ = 0.0;
  int near_field_ = 1;
  double theta_max_ = 0.0;
  double truncation_bound_ = 0.0;
};

struct PotentialResult {
  GridFn A;
  /// Direct lambda = 1 values (cross-check); empty when not computed.
  Vec direct;
  Vec error;
  Vec order;
  double J = 0.0, K = 0.0, sigma2 = 0.0;
  double theta_max = 0.0;
  double truncation_bound = 0.0;
  std::string method;
  std::string reference_g;
};

/// A psi on `x_grid` (values are overwritten).
inline PotentialResult potential_A(const ALaw& law, const PsiFunction& psi, const FClassCert& cert, GridFn x_grid,
                                   const QuadParams& quad = {}) {
  PotentialEvaluator ev(law, psi, cert, quad);
  PotentialResult out;
  const std::size_t n = x_grid.size();
  std::vector<PotentialPoint> pts(n);
  parallel_for(n, quad.workers, [&](std::size_t i) { pts[i] = ev.evaluate(x_grid.x(i)); });
  out.direct.resize(n);
  out.error.resize(n);
  out.order.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    x_grid.values[i] = pts[i].value;
    out.direct[i] = pts[i].direct;
    out.error[i] = pts[i].error;
    out.order[i] = pts[i].order;
  }
  out.J = cert.J;
  out.K = cert.K;
  out.sigma2 = sigma2(law);
  out.theta_max = ev.theta_max();
  out.truncation_bound = ev.truncation_bound();
  const bool richardson = quad.method == LambdaMethod::Richardson || (quad.method == LambdaMethod::Auto && cert.J != 0.0);
  out.method = richardson ? "richardson" : "direct";
  out.reference_g = ev.reference_g();
  x_grid.tags["J"] = cert.J;
  x_grid.tags["K"] = cert.K;
  x_grid.tags["sigma2"] = out.sigma2;
  x_grid.tags["quad_tol"] = quad.tol;
  out.A = std::move(x_grid);
  return out;
}

/// mu bar * f(x) - f(x) - psi(x) at each x, with f evaluated pointwise.
template <class F>
Vec poisson_residual(const ALaw& law, F&& f, const PsiFunction& psi, std::span<const double> xs) {
  Vec out(xs.size());
  std::function<double(std::function<double(double)>)> expect;
  if (const auto* l = std::get_if<LogNormalA>(&law)) {
    // Adaptive rather than Gauss-Hermite: solutions are often only piecewise smooth.
    const double s = l->s;
    expect = [s](std::function<double(double)> g) {
      auto dens = [&](double y) { return g(y) * std::exp(-0.5 * y * y / (s * s)) / (s * std::sqrt(2.0 * kPi)); };
      return integrate_adaptive(dens, -12.0 * s, 12.0 * s, 1e-12, 0.0, 20000, 48).value;
    };
  } else if (has_finite_support(law)) {
    const auto st = step_law(law);
    expect = [st](std::function<double(double)> g) {
      double acc = 0.0;
      for (std::size_t i = 0; i < st.values.size(); ++i) acc += st.probs[i] * g(-st.values[i]);
      return acc;
    };
  } else {
    throw Error(ErrorKind::InvalidConfig, "poisson_residual supports lognormal and finite-support laws");
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i];
    out[i] = expect([&](double y) { return f(x + y); }) - f(x) - psi.value(x);
  }
  return out;
}

struct Decomposition {
  double C1 = 0.0;
  double C2 = 0.0;
  /// max |f - A psi - C1 J x - C2| over the fitted points.
  double residual = 0.0;
  std::size_t points = 0;
};

/// Least-squares fit of f = A psi + C1 J x + C2 on the grid points of G(mu bar).
/// With J = 0 the C1 term is absent.
inline Decomposition solution_decomposition(const GridFn& f, const GridFn& a_psi, double J, double lattice_p) {
  if (f.size() != a_psi.size()) throw Error(ErrorKind::InvalidConfig, "grids differ in size");
  Vec xs, ys;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double x = f.x(i);
    if (lattice_p > 0) {
      const double q = x / lattice_p;
      if (std::abs(q - std::round(q)) > 1e-9) continue;
    }
    xs.push_back(x);
    ys.push_back(f.values[i] - a_psi.values[i]);
  }
  Decomposition d;
  d.points = xs.size();
  if (xs.empty()) return d;
  if (J == 0.0) {
    double s = 0.0;
    for (double y : ys) s += y;
    d.C2 = s / static_cast<double>(ys.size());
  } else {
    auto fit = stats::fit_line(xs, ys);
    d.C1 = fit.slope / J;
    d.C2 = fit.intercept;
  }
  for (std::size_t i = 0; i < xs.size(); ++i)
    d.residual = std::max(d.residual, std::abs(ys[i] - d.C1 * J * xs[i] - d.C2));
  return d;
}

}  // namespace critaffine

#endif  // CRITAFFINE_POTENTIAL_HPP
