#ifndef CRITAFFINE_MODEL_HPP
#define CRITAFFINE_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace critaffine {

using Vec = std::vector<double>;
using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kE = 2.71828182845904523536;

// ---------------------------------------------------------------------------
// Laws of log A. Throughout, Y = -log A has law "mu bar" (the step law of the
// multiplicative random walk seen from below); all closed forms below are
// stated for Y.
// ---------------------------------------------------------------------------

/// log A ~ Normal(0, s^2).
struct LogNormalA {
  double s = 1.0;
};

/// log A = +p or -p with probability 1/2 each.
struct TwoPointA {
  double p = 1.0;
};

/// log A = E - 1/k with probability w, and 1/k - E otherwise, E ~ Exp(k).
struct ShiftedExpMixA {
  double rate = 1.0;
  double weight = 0.5;
};

/// log A takes value values[i] with probability probs[i].
struct DiscreteA {
  std::vector<double> values;
  std::vector<double> probs;
};

/// A is the constant a. Never critical unless a == 1, which is degenerate;
/// kept so that configs with it are rejected with a precise reason.
struct ConstantA {
  double a = 1.0;
};

using ALaw = std::variant<LogNormalA, TwoPointA, ShiftedExpMixA, DiscreteA, ConstantA>;

// ---------------------------------------------------------------------------
// Laws of B (vector valued, independent of A).
// ---------------------------------------------------------------------------

struct ConstantB {
  Vec value;
};

/// Independent uniform coordinates on the box [lo, hi].
struct UniformB {
  Vec lo;
  Vec hi;
};

/// B = R * U, log R ~ Normal(mu, s^2), U uniform on the unit sphere.
struct LogNormalRadialB {
  double mu = 0.0;
  double s = 1.0;
};

/// B ~ Normal(mean, cov); cov is row-major d x d.
struct GaussianB {
  Vec mean;
  Vec cov;
};

using BLaw = std::variant<ConstantB, UniformB, LogNormalRadialB, GaussianB>;

/// Law mu of (B_1, A_1).
struct MuSpec {
  int dim = 1;
  ALaw a_law = LogNormalA{};
  BLaw b_law = ConstantB{{1.0}};
  /// x0 of the conjugated law delta_(x0,1) * mu * delta_(-x0,1); zero means none.
  Vec recenter_offset;
};

/// Element (b, a) of the "ax+b" group.
struct AffinePair {
  Vec b;
  double a = 1.0;

  static AffinePair identity(int dim) { return {Vec(static_cast<std::size_t>(dim), 0.0), 1.0}; }
};

/// (b, a) . (b', a') = (b + a b', a a').
inline AffinePair compose(const AffinePair& g, const AffinePair& h) {
  AffinePair out{g.b, g.a * h.a};
  for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] += g.a * h.b[i];
  return out;
}

/// (b, a) . x = a x + b.
inline Vec act(const AffinePair& g, std::span<const double> x) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = g.a * x[i] + g.b[i];
  return out;
}

inline double act(const AffinePair& g, double x) { return g.a * x + g.b.at(0); }

// ---------------------------------------------------------------------------
// Closed forms for mu bar.
// ---------------------------------------------------------------------------

namespace detail {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }

/// P(Z <= z).
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// t - sin t without cancellation.
inline double t_minus_sin(double t) {
  if (std::abs(t) < 0.25) {
    const double t2 = t * t;
    return t * t2 * (1.0 / 6 - t2 * (1.0 / 120 - t2 * (1.0 / 5040 - t2 * (1.0 / 362880))));
  }
  return t - std::sin(t);
}

/// Kernel r for Y = E - 1/k, E ~ Exp(k).
inline double r_exp_right(double x, double k) {
  if (x < 0) return 2.0 * std::exp(k * x - 1.0) / k;
  const double c = 1.0 / k - x;
  if (c <= 0) return 0.0;
  return 2.0 * (c + std::expm1(-k * c) / k);
}

/// Floating gcd of |values| (0 if incommensurate at the given tolerance).
inline double lattice_gcd(std::span<const double> values, double rel_tol = 1e-9) {
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  const double tol = rel_tol * scale;
  double g = 0.0;
  for (double v : values) {
    double a = std::abs(v), b = g;
    if (a < tol) continue;
    if (b < tol) {
      g = a;
      continue;
    }
    int guard = 0;
    while (b > tol && guard++ < 200) {
      const double r = std::fmod(a, b);
      a = b;
      b = (r > b - tol) ? 0.0 : r;
    }
    g = a;
  }
  if (g < 1e-6 * scale) return 0.0;
  for (double v : values) {
    const double q = v / g;
    if (std::abs(q - std::round(q)) > 1e-6) return 0.0;
  }
  return g;
}

}  // namespace detail

/// E[log A], analytic.
inline double mean_log_a(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const LogNormalA&) { return 0.0; },
                        [](const TwoPointA&) { return 0.0; },
                        [](const ShiftedExpMixA&) { return 0.0; },
                        [](const DiscreteA& d) {
                          double m = 0.0;
                          for (std::size_t i = 0; i < d.values.size(); ++i) m += d.probs[i] * d.values[i];
                          return m;
                        },
                        [](const ConstantA& c) { return std::log(c.a); },
                    },
                    law);
}

/// sigma^2 = E[Y^2].
inline double sigma2(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const LogNormalA& l) { return l.s * l.s; },
                        [](const TwoPointA& t) { return t.p * t.p; },
                        [](const ShiftedExpMixA& e) { return 1.0 / (e.rate * e.rate); },
                        [](const DiscreteA& d) {
                          double m = 0.0;
                          for (std::size_t i = 0; i < d.values.size(); ++i)
                            m += d.probs[i] * d.values[i] * d.values[i];
                          return m;
                        },
                        [](const ConstantA& c) { return std::log(c.a) * std::log(c.a); },
                    },
                    law);
}

/// Third and fourth moments of Y.
inline double moment_y(const ALaw& law, int order) {
  return std::visit(
      detail::overloaded{
          [&](const LogNormalA& l) { return order == 4 ? 3.0 * std::pow(l.s, 4) : 0.0; },
          [&](const TwoPointA& t) { return order == 4 ? std::pow(t.p, 4) : 0.0; },
          [&](const ShiftedExpMixA& e) {
            const double k = e.rate;
            if (order == 4) return 9.0 / std::pow(k, 4);
            return (1.0 - 2.0 * e.weight) * 2.0 / (k * k * k);
          },
          [&](const DiscreteA& d) {
            double m = 0.0;
            for (std::size_t i = 0; i < d.values.size(); ++i)
              m += d.probs[i] * std::pow(-d.values[i], order);
            return m;
          },
          [&](const ConstantA& c) { return std::pow(-std::log(c.a), order); },
      },
      law);
}

/// Span p of the lattice generated by supp(log A); 0 when aperiodic.
inline double lattice_span(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const LogNormalA&) { return 0.0; },
                        [](const TwoPointA& t) { return t.p; },
                        [](const ShiftedExpMixA&) { return 0.0; },
                        [](const DiscreteA& d) { return detail::lattice_gcd(d.values); },
                        [](const ConstantA& c) { return std::abs(std::log(c.a)); },
                    },
                    law);
}

/// Largest delta with E exp(delta |Y|) finite (exclusive bound; inf if all).
inline double exp_moment_delta(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const ShiftedExpMixA& e) { return e.rate; },
                        [](const auto&) { return kInf; },
                    },
                    law);
}

/// True when Y and -Y have the same law.
inline bool is_symmetric(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const LogNormalA&) { return true; },
                        [](const TwoPointA&) { return true; },
                        [](const ShiftedExpMixA& e) { return e.weight == 0.5; },
                        [](const DiscreteA& d) { return std::abs(moment_y(d, 3)) < 1e-14; },
                        [](const ConstantA&) { return false; },
                    },
                    law);
}

/// mu bar hat(theta) = E exp(i theta Y).
inline cplx char_fn(const ALaw& law, double theta) {
  return std::visit(
      detail::overloaded{
          [&](const LogNormalA& l) { return cplx(std::exp(-0.5 * l.s * l.s * theta * theta), 0.0); },
          [&](const TwoPointA& t) { return cplx(std::cos(t.p * theta), 0.0); },
          [&](const ShiftedExpMixA& e) {
            const double k = e.rate;
            const cplx i(0.0, 1.0);
            const cplx c1 = std::exp(i * theta / k) * k / (k + i * theta);
            return e.weight * c1 + (1.0 - e.weight) * std::conj(c1);
          },
          [&](const DiscreteA& d) {
            cplx s = 0.0;
            for (std::size_t j = 0; j < d.values.size(); ++j)
              s += d.probs[j] * std::exp(cplx(0.0, -theta * d.values[j]));
            return s;
          },
          [&](const ConstantA& c) { return std::exp(cplx(0.0, -theta * std::log(c.a))); },
      },
      law);
}

/// 1 - mu bar hat(theta), evaluated without cancellation near theta = 0.
inline cplx one_minus_char_fn(const ALaw& law, double theta) {
  return std::visit(
      detail::overloaded{
          [&](const LogNormalA& l) { return cplx(-std::expm1(-0.5 * l.s * l.s * theta * theta), 0.0); },
          [&](const TwoPointA& t) {
            const double h = std::sin(0.5 * t.p * theta);
            return cplx(2.0 * h * h, 0.0);
          },
          [&](const ShiftedExpMixA& e) {
            const double t = theta / e.rate;
            const double h = std::sin(0.5 * t);
            // 1 - e^{it}/(1+it) = (1 + it - e^{it}) / (1 + it)
            const cplx c1 = cplx(2.0 * h * h, detail::t_minus_sin(t)) / cplx(1.0, t);
            return e.weight * c1 + (1.0 - e.weight) * std::conj(c1);
          },
          [&](const DiscreteA& d) {
            cplx s = 0.0;
            for (std::size_t j = 0; j < d.values.size(); ++j) {
              const double u = -theta * d.values[j];
              const double h = std::sin(0.5 * u);
              s += d.probs[j] * cplx(2.0 * h * h, -std::sin(u));
            }
            return s;
          },
          [&](const ConstantA& c) { return 1.0 - std::exp(cplx(0.0, -theta * std::log(c.a))); },
      },
      law);
}

/// r(x) = E|Y - x| - |x|.
inline double r_kernel(const ALaw& law, double x) {
  return std::visit(
      detail::overloaded{
          [&](const LogNormalA& l) {
            const double ax = std::abs(x);
            const double t = ax / l.s;
            return std::max(0.0, 2.0 * (l.s * detail::normal_pdf(t) - ax * detail::normal_cdf(-t)));
          },
          [&](const TwoPointA& t) { return std::max(0.0, t.p - std::abs(x)); },
          [&](const ShiftedExpMixA& e) {
            return e.weight * detail::r_exp_right(-x, e.rate) +
                   (1.0 - e.weight) * detail::r_exp_right(x, e.rate);
          },
          [&](const DiscreteA& d) {
            double s = 0.0;
            for (std::size_t j = 0; j < d.values.size(); ++j) s += d.probs[j] * std::abs(-d.values[j] - x);
            return std::max(0.0, s - std::abs(x));
          },
          [&](const ConstantA& c) { return std::abs(-std::log(c.a) - x) - std::abs(x); },
      },
      law);
}

/// Radius beyond which r vanishes (compact support) or drops below 1e-300.
inline double r_support_radius(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const LogNormalA& l) { return 38.0 * l.s; },
                        [](const TwoPointA& t) { return t.p; },
                        [](const ShiftedExpMixA& e) { return 700.0 / e.rate; },
                        [](const DiscreteA& d) {
                          double m = 0.0;
                          for (double v : d.values) m = std::max(m, std::abs(v));
                          return m;
                        },
                        [](const ConstantA& c) { return std::abs(std::log(c.a)); },
                    },
                    law);
}

/// Finite step law of log A, when the family has one.
struct StepLaw {
  std::vector<double> values;
  std::vector<double> probs;
};

inline bool has_finite_support(const ALaw& law) {
  return std::holds_alternative<TwoPointA>(law) || std::holds_alternative<DiscreteA>(law);
}

inline StepLaw step_law(const ALaw& law) {
  if (const auto* t = std::get_if<TwoPointA>(&law)) return {{t->p, -t->p}, {0.5, 0.5}};
  if (const auto* d = std::get_if<DiscreteA>(&law)) return {d->values, d->probs};
  throw Error(ErrorKind::InvalidConfig, "a_law has no finite support");
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

struct ValidationCheck {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool ok = true;
  ErrorKind failure = ErrorKind::InvalidConfig;
  double lattice_span = 0.0;
  double sigma2 = 0.0;
  double mean_log_a = 0.0;
  double delta = kInf;    // exponential moment exponent of |log A|
  double epsilon = kInf;  // polynomial moment excess over 2
  bool symmetric_steps = false;
};

namespace detail {

inline bool b_is_zero(const BLaw& b) {
  return std::visit(overloaded{
                        [](const ConstantB& c) {
                          return std::all_of(c.value.begin(), c.value.end(), [](double v) { return v == 0.0; });
                        },
                        [](const UniformB& u) {
                          for (std::size_t i = 0; i < u.lo.size(); ++i)
                            if (u.lo[i] != 0.0 || u.hi[i] != 0.0) return false;
                          return true;
                        },
                        [](const LogNormalRadialB&) { return false; },
                        [](const GaussianB& g) {
                          return std::all_of(g.mean.begin(), g.mean.end(), [](double v) { return v == 0.0; }) &&
                                 std::all_of(g.cov.begin(), g.cov.end(), [](double v) { return v == 0.0; });
                        },
                    },
                    b);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Lower Cholesky factor of a row-major SPD (or PSD) matrix; throws if not PSD.
inline Vec cholesky(const Vec& a, int d) {
  Vec l(static_cast<std::size_t>(d * d), 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[i * d + j];
      for (int k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (s < -1e-12 * std::max(1.0, std::abs(a[i * d + i])))
          throw Error(ErrorKind::InvalidConfig, "b_law covariance is not positive semidefinite");
        l[i * d + i] = std::sqrt(std::max(s, 0.0));
      } else {
        l[i * d + j] = l[j * d + j] > 0 ? s / l[j * d + j] : 0.0;
      }
    }
  }
  return l;
}

inline std::size_t b_dim(const BLaw& b) {
  return std::visit(overloaded{
                        [](const ConstantB& c) { return c.value.size(); },
                        [](const UniformB& u) { return u.lo.size(); },
                        [](const LogNormalRadialB&) { return std::size_t{0}; },
                        [](const GaussianB& g) { return g.mean.size(); },
                    },
                    b);
}

}  // namespace detail

/// Checks hypothesis (H) and the structural restrictions of this library.
inline ValidationReport validate_spec(const MuSpec& spec) {
  ValidationReport rep;
  auto fail = [&](ErrorKind kind, std::string name, std::string detail) {
    rep.checks.push_back({std::move(name), false, std::move(detail)});
    if (rep.ok) rep.failure = kind;
    rep.ok = false;
  };
  auto pass = [&](std::string name, std::string detail) {
    rep.checks.push_back({std::move(name), true, std::move(detail)});
  };

  // Structure.
  if (spec.dim < 1) {
    fail(ErrorKind::InvalidConfig, "dimension", "dim must be >= 1");
    return rep;
  }
  const std::size_t bd = detail::b_dim(spec.b_law);
  if (bd != 0 && bd != static_cast<std::size_t>(spec.dim)) {
    fail(ErrorKind::InvalidConfig, "dimension", "b_law dimension does not match dim");
    return rep;
  }
  if (!spec.recenter_offset.empty() && spec.recenter_offset.size() != static_cast<std::size_t>(spec.dim)) {
    fail(ErrorKind::InvalidConfig, "dimension", "recenter_offset dimension does not match dim");
    return rep;
  }
  if (const auto* u = std::get_if<UniformB>(&spec.b_law)) {
    if (u->hi.size() != u->lo.size()) {
      fail(ErrorKind::InvalidConfig, "b_law", "uniform box bounds differ in length");
      return rep;
    }
    for (std::size_t i = 0; i < u->lo.size(); ++i)
      if (u->hi[i] < u->lo[i]) {
        fail(ErrorKind::InvalidConfig, "b_law", "uniform box has hi < lo");
        return rep;
      }
  }
  if (const auto* g = std::get_if<GaussianB>(&spec.b_law)) {
    if (g->cov.size() != g->mean.size() * g->mean.size()) {
      fail(ErrorKind::InvalidConfig, "b_law", "gaussian covariance must be d x d");
      return rep;
    }
    try {
      detail::cholesky(g->cov, static_cast<int>(g->mean.size()));
    } catch (const Error& e) {
      fail(ErrorKind::InvalidConfig, "b_law", e.what());
      return rep;
    }
  }
  if (const auto* d = std::get_if<DiscreteA>(&spec.a_law)) {
    double total = 0.0;
    bool bad = d->values.empty() || d->values.size() != d->probs.size();
    for (double p : d->probs) {
      bad = bad || !(p >= 0.0);
      total += p;
    }
    if (bad || std::abs(total - 1.0) > 1e-12) {
      fail(ErrorKind::InvalidConfig, "a_law", "discrete law needs matching values/probs summing to 1");
      return rep;
    }
  }

  // Moment finiteness: every family here has all polynomial moments of
  // |log A| + log+|B| provided its parameters are finite and scales positive.
  bool params_ok = std::visit(detail::overloaded{
                                  [](const LogNormalA& l) { return std::isfinite(l.s) && l.s > 0; },
                                  [](const TwoPointA& t) { return std::isfinite(t.p) && t.p > 0; },
                                  [](const ShiftedExpMixA& e) {
                                    return std::isfinite(e.rate) && e.rate > 0 && e.weight >= 0 && e.weight <= 1;
                                  },
                                  [](const DiscreteA& d) { return detail::all_finite(d.values); },
                                  [](const ConstantA& c) { return std::isfinite(c.a) && c.a > 0; },
                              },
                              spec.a_law) &&
                   std::visit(detail::overloaded{
                                  [](const ConstantB& c) { return detail::all_finite(c.value); },
                                  [](const UniformB& u) { return detail::all_finite(u.lo) && detail::all_finite(u.hi); },
                                  [](const LogNormalRadialB& l) { return std::isfinite(l.mu) && std::isfinite(l.s) && l.s >= 0; },
                                  [](const GaussianB& g) { return detail::all_finite(g.mean) && detail::all_finite(g.cov); },
                              },
                              spec.b_law) &&
                   detail::all_finite(spec.recenter_offset);
  if (!params_ok) {
    fail(ErrorKind::MomentFailure, "moments", "non-finite or non-positive scale parameter");
    return rep;
  }
  rep.delta = exp_moment_delta(spec.a_law);
  pass("moments", "(|log A| + log+|B|)^(2+eps) finite for every eps > 0");

  rep.mean_log_a = mean_log_a(spec.a_law);
  const double scale = std::sqrt(std::max(sigma2(spec.a_law), 0.0));
  if (std::abs(rep.mean_log_a) > 1e-12 * std::max(1.0, scale)) {
    fail(ErrorKind::NonCritical, "criticality", "E[log A] = " + std::to_string(rep.mean_log_a) + " != 0");
  } else {
    pass("criticality", "E[log A] = 0 (analytic)");
  }

  rep.sigma2 = sigma2(spec.a_law);
  rep.lattice_span = lattice_span(spec.a_law);
  rep.symmetric_steps = is_symmetric(spec.a_law);

  bool a_trivial = rep.sigma2 == 0.0;
  if (const auto* d = std::get_if<DiscreteA>(&spec.a_law)) {
    double p0 = 0.0;
    for (std::size_t i = 0; i < d->values.size(); ++i)
      if (d->values[i] == 0.0) p0 += d->probs[i];
    a_trivial = a_trivial || p0 >= 1.0;
  }
  if (a_trivial) {
    fail(ErrorKind::Degenerate, "nondegenerate_a", "P[A = 1] = 1");
  } else {
    pass("nondegenerate_a", "P[A = 1] < 1");
  }
  if (detail::b_is_zero(spec.b_law)) {
    fail(ErrorKind::Degenerate, "no_fixed_point",
         "B = 0 a.s. makes the recentring point a common fixed point");
  } else {
    pass("no_fixed_point", "P[A x + B = x] < 1 for all x");
  }

  if (rep.sigma2 > 0 && std::isfinite(rep.sigma2)) {
    pass("sigma2", "sigma^2 = " + std::to_string(rep.sigma2));
  } else {
    fail(ErrorKind::MomentFailure, "sigma2", "sigma^2 must be finite and positive");
  }
  pass("lattice", rep.lattice_span > 0 ? "lattice span p = " + std::to_string(rep.lattice_span) : "aperiodic");
  return rep;
}

/// Throws the first failure of validate_spec.
inline ValidationReport require_valid(const MuSpec& spec) {
  auto rep = validate_spec(spec);
  if (!rep.ok) {
    std::string msg;
    for (const auto& c : rep.checks)
      if (!c.passed) msg += c.name + ": " + c.detail + "; ";
    throw Error(rep.failure, msg);
  }
  return rep;
}

/// Index of a coordinate of B that is a.s. positive (before recentring), if
/// any. Such a coordinate gives the sufficient positive half-space form of
/// hypothesis (G).
inline int positive_coordinate(const MuSpec& spec) {
  auto positive = std::visit(detail::overloaded{
                                 [](const ConstantB& c) {
                                   for (std::size_t i = 0; i < c.value.size(); ++i)
                                     if (c.value[i] > 0) return static_cast<int>(i);
                                   return -1;
                                 },
                                 [](const UniformB& u) {
                                   for (std::size_t i = 0; i < u.lo.size(); ++i)
                                     if (u.lo[i] > 0) return static_cast<int>(i);
                                   return -1;
                                 },
                                 [](const auto&) { return -1; },
                             },
                             spec.b_law);
  return positive;
}

/// True when B and -B have the same law.
inline bool b_is_symmetric(const BLaw& b) {
  return std::visit(detail::overloaded{
                        [](const ConstantB& c) {
                          return std::all_of(c.value.begin(), c.value.end(), [](double v) { return v == 0.0; });
                        },
                        [](const UniformB& u) {
                          for (std::size_t i = 0; i < u.lo.size(); ++i)
                            if (u.lo[i] != -u.hi[i]) return false;
                          return true;
                        },
                        [](const LogNormalRadialB&) { return true; },
                        [](const GaussianB& g) {
                          return std::all_of(g.mean.begin(), g.mean.end(), [](double v) { return v == 0.0; });
                        },
                    },
                    b);
}

// ---------------------------------------------------------------------------
// Sampling.
// ---------------------------------------------------------------------------

/// Draws (B, A) from a validated spec. Precomputes what the hot loop needs.
class PairSampler {
 public:
  explicit PairSampler(const MuSpec& spec) : spec_(spec), dim_(spec.dim) {
    if (const auto* g = std::get_if<GaussianB>(&spec.b_law)) chol_ = detail::cholesky(g->cov, dim_);
    if (const auto* d = std::get_if<DiscreteA>(&spec.a_law)) {
      cdf_.resize(d->probs.size());
      std::partial_sum(d->probs.begin(), d->probs.end(), cdf_.begin());
      cdf_.back() = 1.0;
    }
    recenter_ = std::any_of(spec.recenter_offset.begin(), spec.recenter_offset.end(),
                            [](double v) { return v != 0.0; });
    scratch_.resize(static_cast<std::size_t>(dim_));
  }

  int dim() const noexcept { return dim_; }
  const MuSpec& spec() const noexcept { return spec_; }

  /// Returns log A and writes B into b (length dim).
  double draw(RandomStream& rs, double* b) {
    const double log_a = draw_log_a(rs);
    draw_b(rs, b);
    if (recenter_) {
      const double one_minus_a = -std::expm1(log_a);
      for (int i = 0; i < dim_; ++i) b[i] += one_minus_a * spec_.recenter_offset[i];
    }
    return log_a;
  }

  double draw_log_a(RandomStream& rs) {
    switch (spec_.a_law.index()) {
      case 0:
        return std::get<LogNormalA>(spec_.a_law).s * rs.normal();
      case 1: {
        const double p = std::get<TwoPointA>(spec_.a_law).p;
        return rs.coin() ? p : -p;
      }
      case 2: {
        const auto& e = std::get<ShiftedExpMixA>(spec_.a_law);
        const double centred = rs.exponential() / e.rate - 1.0 / e.rate;
        return rs.uniform() < e.weight ? centred : -centred;
      }
      case 3: {
        const auto& d = std::get<DiscreteA>(spec_.a_law);
        const double u = rs.uniform();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return d.values[static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                                          static_cast<std::ptrdiff_t>(cdf_.size()) - 1))];
      }
      default:
        return std::log(std::get<ConstantA>(spec_.a_law).a);
    }
  }

 private:
  void draw_b(RandomStream& rs, double* b) {
    switch (spec_.b_law.index()) {
      case 0: {
        const auto& c = std::get<ConstantB>(spec_.b_law);
        for (int i = 0; i < dim_; ++i) b[i] = c.value[i];
        break;
      }
      case 1: {
        const auto& u = std::get<UniformB>(spec_.b_law);
        for (int i = 0; i < dim_; ++i) b[i] = u.lo[i] + (u.hi[i] - u.lo[i]) * rs.uniform();
        break;
      }
      case 2: {
        const auto& l = std::get<LogNormalRadialB>(spec_.b_law);
        const double radius = std::exp(l.mu + l.s * rs.normal());
        if (dim_ == 1) {
          b[0] = rs.coin() ? radius : -radius;
        } else {
          double norm2 = 0.0;
          do {
            norm2 = 0.0;
            for (int i = 0; i < dim_; ++i) {
              b[i] = rs.normal();
              norm2 += b[i] * b[i];
            }
          } while (norm2 == 0.0);
          const double f = radius / std::sqrt(norm2);
          for (int i = 0; i < dim_; ++i) b[i] *= f;
        }
        break;
      }
      default: {
        const auto& g = std::get<GaussianB>(spec_.b_law);
        for (int i = 0; i < dim_; ++i) scratch_[i] = rs.normal();
        for (int i = 0; i < dim_; ++i) {
          double s = g.mean[i];
          for (int k = 0; k <= i; ++k) s += chol_[i * dim_ + k] * scratch_[k];
          b[i] = s;
        }
        break;
      }
    }
  }

  MuSpec spec_;
  int dim_;
  Vec chol_;
  std::vector<double> cdf_;
  Vec scratch_;
  bool recenter_ = false;
};

/// One draw of (B, A) ~ mu.
inline AffinePair sample_pair(const MuSpec& spec, RandomStream& rs) {
  PairSampler sampler(spec);
  AffinePair g{Vec(static_cast<std::size_t>(spec.dim)), 1.0};
  g.a = std::exp(sampler.draw(rs, g.b.data()));
  return g;
}

}  // namespace critaffine

#endif  // CRITAFFINE_MODEL_HPP
