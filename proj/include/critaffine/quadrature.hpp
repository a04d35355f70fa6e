#ifndef CRITAFFINE_QUADRATURE_HPP
#define CRITAFFINE_QUADRATURE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "error.hpp"

namespace critaffine {

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  int evaluations = 0;
  bool converged = true;
};

namespace detail {

// Gauss-Kronrod 10/21 nodes and weights on [-1, 1] (QUADPACK qk21).
inline constexpr double gk21_x[11] = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};
inline constexpr double gk21_wk[11] = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077715950051186, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};
inline constexpr double gk21_wg[5] = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

struct Panel {
  double a, b, value, error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

template <class F>
Panel gk21(F& f, double a, double b, int& evals) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kron = fc * gk21_wk[10];
  double gauss = 0.0;
  for (int j = 0; j < 10; ++j) {
    const double dx = h * gk21_x[j];
    const double f1 = f(c - dx);
    const double f2 = f(c + dx);
    kron += gk21_wk[j] * (f1 + f2);
    if (j % 2 == 1) gauss += gk21_wg[j / 2] * (f1 + f2);
  }
  evals += 21;
  const double value = kron * h;
  const double err = std::abs((kron - gauss) * h);
  return {a, b, value, err};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (21-point) integration on [a, b].
///
/// Bisects the panel with the largest error estimate until the summed
/// estimate falls below max(abs_tol, rel_tol*|I|). `initial_panels`
/// pre-splits the interval, which matters for oscillatory integrands.
/// Throws QuadratureFailure when the panel budget runs out, unless
/// `throw_on_failure` is false.
template <class F>
QuadResult integrate_adaptive(F&& f, double a, double b, double abs_tol, double rel_tol = 0.0,
                              int max_panels = 20000, int initial_panels = 1,
                              bool throw_on_failure = true) {
  QuadResult out;
  if (a == b) return out;
  double sign = 1.0;
  if (a > b) {
    std::swap(a, b);
    sign = -1.0;
  }
  std::priority_queue<detail::Panel> heap;
  double total = 0.0, total_err = 0.0;
  const int n0 = std::max(initial_panels, 1);
  for (int k = 0; k < n0; ++k) {
    const double lo = a + (b - a) * k / n0;
    const double hi = (k + 1 == n0) ? b : a + (b - a) * (k + 1) / n0;
    auto p = detail::gk21(f, lo, hi, out.evaluations);
    total += p.value;
    total_err += p.error;
    heap.push(p);
  }
  int panels = n0;
  while (total_err > std::max(abs_tol, rel_tol * std::abs(total))) {
    if (panels >= max_panels) {
      out.converged = false;
      break;
    }
    auto worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      out.converged = false;
      heap.push(worst);
      break;
    }
    auto left = detail::gk21(f, worst.a, mid, out.evaluations);
    auto right = detail::gk21(f, mid, worst.b, out.evaluations);
    total += left.value + right.value - worst.value;
    total_err += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++panels;
  }
  // Re-sum to shed the drift of incremental updates.
  total = 0.0;
  total_err = 0.0;
  while (!heap.empty()) {
    total += heap.top().value;
    total_err += heap.top().error;
    heap.pop();
  }
  out.value = sign * total;
  out.error = total_err;
  if (!out.converged && throw_on_failure) {
    throw Error(ErrorKind::QuadratureFailure,
                "adaptive Gauss-Kronrod exceeded " + std::to_string(max_panels) +
                    " panels on [" + std::to_string(a) + ", " + std::to_string(b) +
                    "], error estimate " + std::to_string(total_err));
  }
  return out;
}

/// Fixed composite Gauss-Legendre-like rule (Kronrod nodes) with n panels.
template <class F>
double integrate_panels(F&& f, double a, double b, int n) {
  double total = 0.0;
  int evals = 0;
  for (int k = 0; k < n; ++k) {
    const double lo = a + (b - a) * k / n;
    const double hi = (k + 1 == n) ? b : a + (b - a) * (k + 1) / n;
    total += detail::gk21(f, lo, hi, evals).value;
  }
  return total;
}

/// Gauss-Hermite nodes/weights for E[h(Z)], Z ~ N(0, 1) (probabilists' form).
struct HermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Newton iteration on the normalized Hermite recurrence; fine up to n ~ 150.
inline HermiteRule gauss_hermite_prob(int n) {
  HermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  // Physicists' Hermite roots, then rescale: Z = sqrt(2) t, weight / sqrt(pi).
  const double pi = 3.14159265358979323846;
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -1.0 / 6.0);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes[1];
    } else {
      z = 2.0 * z - rule.nodes[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0 / std::pow(pi, 0.25), p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    rule.nodes[i] = z;
    rule.nodes[n - 1 - i] = -z;
    const double w = 2.0 / (pp * pp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] *= std::sqrt(2.0);
    rule.weights[i] /= std::sqrt(pi);
  }
  return rule;
}

}  // namespace critaffine

#endif  // CRITAFFINE_QUADRATURE_HPP
