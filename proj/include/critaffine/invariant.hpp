#ifndef CRITAFFINE_INVARIANT_HPP
#define CRITAFFINE_INVARIANT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "walk.hpp"

namespace critaffine {

/// What to do when an inner ladder pair of the nu_L sampler is truncated.
enum class TruncationPolicy {
  /// Draw a fresh ladder pair from the next stream slot and count the event.
  Redraw,
  /// Throw ErrorKind::Truncated.
  Fail,
};

struct CloudMeta {
  std::string normalization = "nuL_probability";
  std::string spec_hash;
  std::uint64_t seed = 0;
  std::int64_t m_excursions = 0;
  std::int64_t n_max = 0;
  std::int64_t n_truncated = 0;
  double truncated_fraction = 0.0;
  /// Independent clusters used for standard errors.
  std::int64_t n_clusters = 0;
  /// Points with log|u| above this radius are not stored.
  double store_log_radius = kInf;
  /// Total weight of visited points that were not stored.
  double mass_beyond_radius = 0.0;
  /// nu_L sampler: truncated inner ladder pairs that were redrawn.
  std::int64_t nuL_redraws = 0;
  std::int64_t nuL_samples = 0;
  double tol = 0.0;
  /// Total visited points (stored or not), divided by m.
  double mean_excursion_length = 0.0;
};

/// Weighted point cloud approximating nu (or nu_L).
///
/// Point i belongs to excursion `excursion[i]`; excursions are grouped into
/// clusters (independent ladder chains) by `cluster_of_excursion`.
struct PointCloudMeasure {
  int dim = 1;
  Vec coords;
  Vec weights;
  std::vector<std::uint32_t> excursion;
  std::vector<std::uint32_t> cluster_of_excursion;
  CloudMeta meta;

  std::size_t size() const { return weights.size(); }
  std::span<const double> point(std::size_t i) const {
    return {coords.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  std::uint32_t cluster(std::size_t i) const { return cluster_of_excursion[excursion[i]]; }
  std::size_t n_clusters() const { return static_cast<std::size_t>(meta.n_clusters); }
  double total_mass() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

inline double norm(std::span<const double> u) {
  if (u.size() == 1) return std::abs(u[0]);
  double s = 0.0;
  for (double v : u) s += v * v;
  return std::sqrt(s);
}

/// Cluster totals of sum_i w_i phi(u_i).
template <class Phi>
Vec cluster_totals(const PointCloudMeasure& nu, Phi&& phi) {
  Vec totals(nu.n_clusters(), 0.0);
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double v = phi(nu.point(i));
    if (v != 0.0) totals[nu.cluster(i)] += nu.weights[i] * v;
  }
  return totals;
}

/// Weighted sum with a cluster standard error.
template <class Phi>
stats::Estimate integrate(const PointCloudMeasure& nu, Phi&& phi) {
  const Vec totals = cluster_totals(nu, phi);
  auto e = stats::cluster_sum(totals);
  if (e.value == 0.0 && e.stderr_ == 0.0) return {0.0, 0.0};
  return e;
}

/// FNV-1a over the canonical text of a spec.
inline std::string spec_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// nu_L by the backward series.
// ---------------------------------------------------------------------------

struct NuLOptions {
  std::int64_t n_samples = 10000;
  double tol = 1e-12;
  std::int64_t n_max = 1'000'000;
  std::uint64_t seed = 1;
  int workers = 1;
  TruncationPolicy policy = TruncationPolicy::Redraw;
  /// Safety cap on terms per sample.
  std::int64_t max_terms = 100000;
};

/// Samples nu_L as Q_1 + M_1 Q_2 + M_1 M_2 Q_3 + ..., stopping once the
/// running product of M falls below tol.
///
/// `make_gen()` builds a per-task generator g with `g.dim()` and
/// `double g(RandomStream&, double* q)` returning M (throwing Truncated when
/// the inner excursion is cut at n_max).
template <class MakeGen>
PointCloudMeasure sample_nu_L_with(MakeGen&& make_gen, const NuLOptions& opt) {
  if (!(opt.tol > 0.0 && opt.tol < 1.0)) throw Error(ErrorKind::InvalidConfig, "tol must lie in (0, 1)");
  if (opt.n_samples < 1) throw Error(ErrorKind::InvalidConfig, "nuL_samples must be >= 1");
  const auto n = static_cast<std::size_t>(opt.n_samples);
  const int d = make_gen().dim();
  PointCloudMeasure out;
  out.dim = d;
  out.coords.assign(n * d, 0.0);
  std::vector<std::int64_t> redraws(n, 0);
  parallel_for(n, opt.workers, [&](std::size_t i) {
    auto gen = make_gen();
    RandomStream rs = RandomStream::derive(opt.seed, {stream_tag::nuL, i});
    std::vector<double> q(d);
    double* x = out.coords.data() + i * d;
    double prod = 1.0;
    std::int64_t terms = 0;
    while (prod >= opt.tol) {
      if (++terms > opt.max_terms)
        throw Error(ErrorKind::Truncated, "backward series did not contract within max_terms");
      double m;
      try {
        m = gen(rs, q.data());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Truncated || opt.policy == TruncationPolicy::Fail) throw;
        ++redraws[i];
        continue;
      }
      for (int k = 0; k < d; ++k) x[k] += prod * q[k];
      prod *= m;
    }
  });
  out.weights.assign(n, 1.0 / static_cast<double>(n));
  out.excursion.resize(n);
  out.cluster_of_excursion.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.excursion[i] = out.cluster_of_excursion[i] = static_cast<std::uint32_t>(i);
  out.meta.normalization = "nuL_probability";
  out.meta.seed = opt.seed;
  out.meta.n_max = opt.n_max;
  out.meta.n_clusters = opt.n_samples;
  out.meta.nuL_samples = opt.n_samples;
  out.meta.tol = opt.tol;
  for (auto r : redraws) out.meta.nuL_redraws += r;
  return out;
}

namespace detail {

/// Ladder pair generator from a spec: excursion from 0 to its first descent.
struct SpecLadderGen {
  PairSampler sampler;
  std::int64_t n_max;
  Vec zero;
  int dim() const { return sampler.dim(); }
  double operator()(RandomStream& rs, double* q) {
    auto end = walk_excursion(sampler, zero, n_max, rs, q, [](std::int64_t, double, const double*, bool) {});
    if (end.truncated)
      throw Error(ErrorKind::Truncated, "ladder epoch not reached within n_max = " + std::to_string(n_max));
    return std::exp(end.exit_log_m);
  }
};

}  // namespace detail

inline PointCloudMeasure sample_nu_L(const MuSpec& spec, const NuLOptions& opt) {
  require_valid(spec);
  return sample_nu_L_with(
      [&] {
        return detail::SpecLadderGen{PairSampler(spec), opt.n_max, Vec(static_cast<std::size_t>(spec.dim), 0.0)};
      },
      opt);
}

// ---------------------------------------------------------------------------
// nu by ladder-chain excursions.
// ---------------------------------------------------------------------------

struct NuOptions {
  std::int64_t m_excursions = 1'000'000;
  std::int64_t n_max = 1'000'000;
  std::uint64_t seed = 1;
  int workers = 1;
  double store_log_radius = 20.0;
};

namespace detail {

struct ChainOutput {
  Vec coords;
  std::vector<std::uint32_t> local_excursion;
  std::int64_t truncated = 0;
  std::int64_t visited = 0;
  std::int64_t beyond = 0;
};

inline std::vector<std::int64_t> chain_sizes(std::int64_t m, std::int64_t n_chains) {
  std::vector<std::int64_t> sizes(static_cast<std::size_t>(n_chains), m / n_chains);
  for (std::int64_t c = 0; c < m % n_chains; ++c) ++sizes[static_cast<std::size_t>(c)];
  return sizes;
}

}  // namespace detail

/// Runs chain c of the estimator, calling visit(local_excursion, X pointer,
/// scaled, S) for each visited point; returns (truncated count, visited).
template <class Visit>
std::pair<std::int64_t, std::int64_t> run_chain(PairSampler& sampler, const PointCloudMeasure& nuL, std::size_t c,
                                                std::int64_t n_excursions, const NuOptions& opt, Visit&& visit) {
  const int d = sampler.dim();
  RandomStream rs = RandomStream::derive(opt.seed, {stream_tag::chain, c});
  Vec start(nuL.point(c).begin(), nuL.point(c).end());
  Vec exit(static_cast<std::size_t>(d));
  std::int64_t truncated = 0, visited = 0;
  for (std::int64_t k = 0; k < n_excursions; ++k) {
    auto end = walk_excursion(sampler, start, opt.n_max, rs, exit.data(),
                              [&](std::int64_t, double s, const double* p, bool scaled) { visit(k, p, scaled, s); });
    visited += end.length;
    if (end.truncated) {
      ++truncated;
      // Restart the chain from a fresh stationary draw.
      RandomStream pick = RandomStream::derive(opt.seed, {stream_tag::restart, c, static_cast<std::uint64_t>(k)});
      const auto j = static_cast<std::size_t>(pick.below(nuL.size()));
      start.assign(nuL.point(j).begin(), nuL.point(j).end());
    } else {
      start = exit;
    }
  }
  return {truncated, visited};
}

/// Point cloud for nu: points X_0 .. X_{L-1} of m excursions, weight 1/m each.
///
/// Excursions are arranged in n_chains = min(m, |nuL|) ladder chains; chain c
/// starts at the c-th nu_L sample and each later excursion starts where the
/// previous one reached its ladder epoch, so every start is nu_L distributed.
/// A truncated excursion restarts its chain from a uniformly chosen nu_L
/// sample. Clusters are chains.
inline PointCloudMeasure estimate_nu(const MuSpec& spec, const PointCloudMeasure& nuL, const NuOptions& opt) {
  require_valid(spec);
  if (opt.m_excursions < 1) throw Error(ErrorKind::InvalidConfig, "m_excursions must be >= 1");
  if (nuL.size() == 0) throw Error(ErrorKind::InvalidConfig, "empty nu_L sample");
  if (nuL.dim != spec.dim) throw Error(ErrorKind::InvalidConfig, "nu_L dimension mismatch");
  const std::int64_t n_chains = std::min<std::int64_t>(opt.m_excursions, static_cast<std::int64_t>(nuL.size()));
  const auto sizes = detail::chain_sizes(opt.m_excursions, n_chains);
  const int d = spec.dim;
  const double r2 = opt.store_log_radius >= 700 ? kInf : std::exp(2.0 * opt.store_log_radius);

  std::vector<detail::ChainOutput> outputs(static_cast<std::size_t>(n_chains));
  parallel_for(static_cast<std::size_t>(n_chains), opt.workers, [&](std::size_t c) {
    PairSampler sampler(spec);
    auto& out = outputs[c];
    auto [tr, vis] = run_chain(sampler, nuL, c, sizes[c], opt,
                               [&](std::int64_t k, const double* p, bool scaled, double) {
                                 if (scaled) {
                                   ++out.beyond;
                                   return;
                                 }
                                 double n2 = 0.0;
                                 for (int i = 0; i < d; ++i) n2 += p[i] * p[i];
                                 if (n2 > r2) {
                                   ++out.beyond;
                                   return;
                                 }
                                 out.coords.insert(out.coords.end(), p, p + d);
                                 out.local_excursion.push_back(static_cast<std::uint32_t>(k));
                               });
    out.truncated = tr;
    out.visited = vis;
  });

  PointCloudMeasure nu;
  nu.dim = d;
  std::size_t total = 0;
  for (const auto& o : outputs) total += o.local_excursion.size();
  nu.coords.reserve(total * d);
  nu.excursion.reserve(total);
  nu.cluster_of_excursion.resize(static_cast<std::size_t>(opt.m_excursions));
  const double w = 1.0 / static_cast<double>(opt.m_excursions);
  std::int64_t first = 0, truncated = 0, visited = 0, beyond = 0;
  for (std::size_t c = 0; c < outputs.size(); ++c) {
    auto& o = outputs[c];
    nu.coords.insert(nu.coords.end(), o.coords.begin(), o.coords.end());
    for (auto k : o.local_excursion) nu.excursion.push_back(static_cast<std::uint32_t>(first + k));
    for (std::int64_t k = 0; k < sizes[c]; ++k)
      nu.cluster_of_excursion[static_cast<std::size_t>(first + k)] = static_cast<std::uint32_t>(c);
    first += sizes[c];
    truncated += o.truncated;
    visited += o.visited;
    beyond += o.beyond;
    o = detail::ChainOutput{};
  }
  nu.weights.assign(total, w);
  nu.meta = nuL.meta;
  nu.meta.seed = opt.seed;
  nu.meta.m_excursions = opt.m_excursions;
  nu.meta.n_max = opt.n_max;
  nu.meta.n_truncated = truncated;
  nu.meta.truncated_fraction = static_cast<double>(truncated) / static_cast<double>(opt.m_excursions);
  nu.meta.n_clusters = n_chains;
  nu.meta.store_log_radius = opt.store_log_radius;
  nu.meta.mass_beyond_radius = static_cast<double>(beyond) * w;
  nu.meta.mean_excursion_length = static_cast<double>(visited) * w;
  nu.meta.normalization = "nuL_probability";
  return nu;
}

/// mu * nu_hat: every point u moves to A u + B with a fresh draw per point.
/// Clusters and weights are kept.
inline PointCloudMeasure convolve_one_step(const MuSpec& spec, const PointCloudMeasure& nu, std::uint64_t seed) {
  PointCloudMeasure out = nu;
  PairSampler sampler(spec);
  const int d = nu.dim;
  Vec b(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < nu.size(); ++i) {
    RandomStream rs = RandomStream::derive(seed, {stream_tag::resample, i});
    const double a = std::exp(sampler.draw(rs, b.data()));
    for (int k = 0; k < d; ++k) out.coords[i * d + k] = a * nu.coords[i * d + k] + b[k];
  }
  return out;
}

/// Number of distinct excursions with a point in the radial shell lo < |u| <= hi.
inline std::size_t distinct_excursions(const PointCloudMeasure& nu, double lo, double hi) {
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double r = norm(nu.point(i));
    if (r > lo && r <= hi) ids.push_back(nu.excursion[i]);
  }
  std::sort(ids.begin(), ids.end());
  return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

}  // namespace critaffine

#endif  // CRITAFFINE_INVARIANT_HPP
