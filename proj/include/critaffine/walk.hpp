#ifndef CRITAFFINE_WALK_HPP
#define CRITAFFINE_WALK_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace critaffine {

/// One excursion of the chain below its first strict descent of S.
struct Excursion {
  int dim = 1;
  /// X_0 .. X_{n_stop-1}, row-major (n_stop x dim).
  Vec path;
  /// S_0 = 0 .. S_{n_stop}.
  Vec walk;
  /// log A_1 .. log A_{n_stop}.
  Vec log_a;
  /// B_1 .. B_{n_stop}, row-major.
  Vec b;
  /// First n with S_n < 0; n_max + 1 when truncated.
  std::int64_t L = 0;
  bool truncated = false;
  /// Weak ascending ladder epochs T_1 < T_2 < ... within the horizon.
  std::vector<std::int64_t> ladder_up;
  /// X_L when not truncated.
  Vec exit_point;
  std::uint64_t seed_tag = 0;

  std::size_t size() const { return walk.empty() ? 0 : walk.size() - 1; }
  std::span<const double> point(std::size_t n) const {
    return {path.data() + n * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

/// (X_L, e^{S_L}).
struct LadderPair {
  Vec q;
  double m = 1.0;
};

/// How an excursion ended.
struct ExcursionEnd {
  /// Number of visited points: L, or n_max when truncated.
  std::int64_t length = 0;
  bool truncated = false;
  /// S_L (undefined when truncated).
  double exit_log_m = 0.0;
};

/// Anything that draws (B, A) steps: `int dim()` and `double draw(RandomStream&, double* b)`
/// returning log A.
template <class S>
concept StepSource = requires(S& s, RandomStream& rs, double* b) {
  { s.dim() } -> std::convertible_to<int>;
  { s.draw(rs, b) } -> std::convertible_to<double>;
};

namespace detail {
inline constexpr double kScaleEnter = 600.0;
inline constexpr double kScaleLeave = 550.0;
}  // namespace detail

/// Core excursion loop.
///
/// `src.draw(rs, b)` returns log A and writes B. `visit(n, S_n, p, scaled)`
/// is called for n = 0 .. length-1. When `scaled` is false, p points at X_n;
/// otherwise p points at Y_n with X_n = e^{S_n} Y_n (used once S_n is so
/// large that X_n could overflow). X_L is written into `exit` (length dim).
template <StepSource Source, class Visit>
ExcursionEnd walk_excursion(Source& src, std::span<const double> start, std::int64_t n_max,
                            RandomStream& rs, double* exit, Visit&& visit) {
  const int d = src.dim();
  double xs[16];
  double bs[16];
  std::vector<double> xv, bv;
  double* x = xs;
  double* b = bs;
  if (d > 16) {
    xv.resize(d);
    bv.resize(d);
    x = xv.data();
    b = bv.data();
  }
  for (int i = 0; i < d; ++i) x[i] = start[i];
  double s = 0.0;
  bool scaled = false;
  ExcursionEnd end;
  visit(std::int64_t{0}, 0.0, static_cast<const double*>(x), false);
  for (std::int64_t n = 1; n <= n_max; ++n) {
    const double la = src.draw(rs, b);
    s += la;
    if (!scaled) {
      const double a = std::exp(la);
      for (int i = 0; i < d; ++i) x[i] = a * x[i] + b[i];
      if (s > detail::kScaleEnter) {
        const double w = std::exp(-s);
        for (int i = 0; i < d; ++i) x[i] *= w;
        scaled = true;
      }
    } else {
      const double w = std::exp(-s);
      for (int i = 0; i < d; ++i) x[i] += w * b[i];
      if (s < detail::kScaleLeave) {
        const double e = std::exp(s);
        for (int i = 0; i < d; ++i) x[i] *= e;
        scaled = false;
      }
    }
    if (s < 0.0) {
      end.length = n;
      end.exit_log_m = s;
      for (int i = 0; i < d; ++i) exit[i] = x[i];
      return end;
    }
    if (n < n_max) visit(n, s, static_cast<const double*>(x), scaled);
  }
  end.length = n_max;
  end.truncated = true;
  return end;
}

/// Records every step of an excursion.
template <StepSource Source>
Excursion run_excursion(Source& src, std::span<const double> start, std::int64_t n_max, RandomStream& rs) {
  const int d = src.dim();
  Excursion ex;
  ex.dim = d;
  ex.seed_tag = rs.key();
  // Wrap the source to keep the raw steps.
  struct Recorder {
    Source& inner;
    Excursion& ex;
    int d;
    int dim() const { return d; }
    double draw(RandomStream& r, double* b) {
      const double la = inner.draw(r, b);
      ex.log_a.push_back(la);
      ex.b.insert(ex.b.end(), b, b + d);
      ex.walk.push_back(ex.walk.back() + la);
      return la;
    }
  } rec{src, ex, d};
  ex.walk.push_back(0.0);
  Vec exit(static_cast<std::size_t>(d));
  auto end = walk_excursion(rec, start, n_max, rs, exit.data(),
                            [&](std::int64_t, double s, const double* p, bool scaled) {
                              const double f = scaled ? std::exp(s) : 1.0;
                              for (int i = 0; i < d; ++i) ex.path.push_back(f * p[i]);
                            });
  ex.truncated = end.truncated;
  ex.L = end.truncated ? n_max + 1 : end.length;
  if (!end.truncated) ex.exit_point = exit;
  double running_max = 0.0;
  for (std::size_t n = 1; n < ex.walk.size(); ++n) {
    if (ex.walk[n] >= running_max) {
      ex.ladder_up.push_back(static_cast<std::int64_t>(n));
      running_max = ex.walk[n];
    }
  }
  return ex;
}

inline Excursion run_excursion(const MuSpec& spec, std::span<const double> start, std::int64_t n_max,
                               RandomStream& rs) {
  PairSampler src(spec);
  return run_excursion(src, start, n_max, rs);
}

/// (X_L, e^{S_L}) for an excursion started at `start`; throws Truncated.
template <StepSource Source>
LadderPair ladder_pair(Source& src, std::span<const double> start, std::int64_t n_max, RandomStream& rs) {
  LadderPair out;
  out.q.resize(static_cast<std::size_t>(src.dim()));
  auto end = walk_excursion(src, start, n_max, rs, out.q.data(), [](std::int64_t, double, const double*, bool) {});
  if (end.truncated)
    throw Error(ErrorKind::Truncated, "ladder epoch not reached within n_max = " + std::to_string(n_max));
  out.m = std::exp(end.exit_log_m);
  return out;
}

inline LadderPair ladder_pair(const MuSpec& spec, std::span<const double> start, std::int64_t n_max,
                              RandomStream& rs) {
  PairSampler src(spec);
  return ladder_pair(src, start, n_max, rs);
}

// ---------------------------------------------------------------------------
// Duality by exact enumeration.
// ---------------------------------------------------------------------------

enum class AscentKind { Weak, Strict };

struct DualityResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double bound = 0.0;
  /// Per-depth terms P(L > i) and P(i is an ascending ladder epoch).
  Vec lhs_terms;
  Vec rhs_terms;
};

namespace detail {

inline constexpr std::size_t kMaxDualityStates = 4'000'000;

/// Merges probability mass on walk values that agree up to `quantum`.
class ValueDistribution {
 public:
  explicit ValueDistribution(double quantum) : quantum_(quantum) {}
  void add(double value, double prob) {
    const auto key = static_cast<std::int64_t>(std::llround(value / quantum_));
    auto [it, inserted] = mass_.try_emplace(key, value, 0.0);
    it->second.second += prob;
  }
  std::size_t size() const { return mass_.size(); }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& [key, vp] : mass_) f(vp.first, vp.second);
  }

 private:
  double quantum_;
  std::map<std::int64_t, std::pair<double, double>> mass_;
};

}  // namespace detail

/// Evaluates both sides of the duality identity with weights s^i:
///   lhs = sum_{i<depth} s^i P(L > i),
///   rhs = sum_{i<depth} s^i P(i is an ascending ladder epoch),
/// each missing at most bound = s^depth / (1 - s).
///
/// Strict descent for L pairs with weak ascent; `Strict` is available to
/// exhibit the mismatch on lattice laws.
inline DualityResult duality_check(const StepLaw& steps, double s, int depth,
                                   AscentKind ascent = AscentKind::Weak) {
  if (!(s > 0.0 && s < 1.0)) throw Error(ErrorKind::InvalidConfig, "duality weight s must lie in (0, 1)");
  if (depth < 1 || depth > 25) throw Error(ErrorKind::DepthOverflow, "depth must lie in [1, 25]");
  double scale = 0.0;
  for (double v : steps.values) scale = std::max(scale, std::abs(v));
  const double quantum = 1e-9 * std::max(scale, 1e-300);
  const double tie = 0.5 * quantum;

  DualityResult out;
  out.bound = std::pow(s, depth) / (1.0 - s);

  // P(S_1..S_i >= 0), tracking S.
  detail::ValueDistribution alive(quantum);
  alive.add(0.0, 1.0);
  // Distance D = S - max_{j<=i} S_j <= 0.
  detail::ValueDistribution below(quantum);
  below.add(0.0, 1.0);

  double w = 1.0;
  for (int i = 0; i < depth; ++i) {
    double p_alive = 0.0;
    alive.for_each([&](double, double p) { p_alive += p; });
    out.lhs_terms.push_back(p_alive);
    if (i == 0) out.rhs_terms.push_back(1.0);
    out.lhs += w * out.lhs_terms.back();
    out.rhs += w * out.rhs_terms.back();
    w *= s;
    if (i + 1 == depth) break;

    detail::ValueDistribution next_alive(quantum);
    alive.for_each([&](double v, double p) {
      for (std::size_t k = 0; k < steps.values.size(); ++k) {
        const double nv = v + steps.values[k];
        if (nv >= -tie) next_alive.add(std::abs(nv) <= tie ? 0.0 : nv, p * steps.probs[k]);
      }
    });
    detail::ValueDistribution next_below(quantum);
    double epoch = 0.0;
    below.for_each([&](double dv, double p) {
      for (std::size_t k = 0; k < steps.values.size(); ++k) {
        const double nd = dv + steps.values[k];
        const bool is_epoch = ascent == AscentKind::Weak ? nd >= -tie : nd > tie;
        const double pk = p * steps.probs[k];
        if (is_epoch) {
          epoch += pk;
          next_below.add(0.0, pk);
        } else {
          next_below.add(std::min(nd, 0.0), pk);
        }
      }
    });
    if (next_alive.size() > detail::kMaxDualityStates || next_below.size() > detail::kMaxDualityStates)
      throw Error(ErrorKind::DepthOverflow, "enumeration exceeds the state budget at depth " + std::to_string(i + 1));
    alive = std::move(next_alive);
    below = std::move(next_below);
    out.rhs_terms.push_back(epoch);
  }
  return out;
}

inline DualityResult duality_check(const MuSpec& spec, double s, int depth, AscentKind ascent = AscentKind::Weak) {
  if (!has_finite_support(spec.a_law))
    throw Error(ErrorKind::InvalidConfig, "duality_check needs a finite-support a_law");
  return duality_check(step_law(spec.a_law), s, depth, ascent);
}

}  // namespace critaffine

#endif  // CRITAFFINE_WALK_HPP
