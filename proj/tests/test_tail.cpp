#include <catch_amalgamated.hpp>

#include <cmath>

#include "critaffine/tail.hpp"

using namespace critaffine;

namespace {

/// Hand-built cloud: each of n_clusters excursions puts points log-uniformly on
/// (0, log_span] with total weight `density * log_span / n_clusters`, so the
/// mass per unit of log-radius is `density` (times `trend(log r)` if given).
PointCloudMeasure synthetic_cloud(std::size_t n_clusters, std::size_t per, double log_span, double density,
                                  std::uint64_t seed, double slope = 0.0, int dim = 1) {
  PointCloudMeasure nu;
  nu.dim = dim;
  nu.meta.n_clusters = static_cast<std::int64_t>(n_clusters);
  RandomStream rs(seed);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    nu.cluster_of_excursion.push_back(static_cast<std::uint32_t>(c));
    for (std::size_t j = 0; j < per; ++j) {
      const double t = log_span * rs.uniform_pos();
      const double w = density * log_span / static_cast<double>(n_clusters * per) * (1.0 + slope * t);
      for (int k = 0; k < dim; ++k) nu.coords.push_back(k == 0 ? std::exp(t) : 0.0);
      nu.weights.push_back(w);
      nu.excursion.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return nu;
}

PointCloudMeasure real_cloud(const MuSpec& spec, std::uint64_t seed, std::int64_t m = 20000) {
  NuLOptions lo;
  lo.n_samples = 1000;
  lo.n_max = 100000;
  lo.seed = seed;
  auto nuL = sample_nu_L(spec, lo);
  NuOptions o;
  o.m_excursions = m;
  o.n_max = 100000;
  o.seed = seed + 1;
  return estimate_nu(spec, nuL, o);
}

auto annulus(double lo, double hi) {
  return [lo, hi](std::span<const double> u) {
    const double r = norm(u);
    return (r > lo && r <= hi) ? 1.0 : 0.0;
  };
}

Vec geometric(int k0, int k1) {
  Vec z;
  for (int k = k0; k <= k1; ++k) z.push_back(std::exp(static_cast<double>(k)));
  return z;
}

}  // namespace

TEST_CASE("dilation: identity, change of variables, covariance, additivity, monotonicity") {
  auto nu = real_cloud(MuSpec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}}, 5);
  auto bump = [](std::span<const double> u) { return std::exp(-std::abs(std::log(norm(u)))); };
  CHECK(dilation(nu, 1.0, bump).value == integrate(nu, bump).value);

  const double z = std::exp(3.0);
  auto direct = shell_pass(nu, {{z, kE * z}});
  CHECK(dilation(nu, z, annulus(1.0, kE)).value == Catch::Approx(direct.mass[0]).epsilon(1e-12));

  const double w = 2.5;
  auto scaled_bump = [&](std::span<const double> u) {
    Vec v(u.begin(), u.end());
    for (double& x : v) x /= w;
    return bump(v);
  };
  CHECK(dilation(nu, 4.0, scaled_bump).value == Catch::Approx(dilation(nu, 4.0 * w, bump).value).epsilon(1e-12));

  auto p = shell_pass(nu, {{z, kE * kE * z}, {z, kE * z}, {kE * z, kE * kE * z}, {z / 2, 3 * kE * z}});
  CHECK(p.mass[0] == Catch::Approx(p.mass[1] + p.mass[2]).epsilon(1e-12));
  CHECK(p.mass[3] >= p.mass[0]);
}

TEST_CASE("estimate_cplus on a cloud with known flat density") {
  const double density = 1.7;
  auto nu = synthetic_cloud(500, 100, 12.0, density, 1);
  auto rep = estimate_cplus(nu, geometric(3, 7));
  REQUIRE(rep.n_reliable == 5);
  CHECK(std::abs(rep.c_plus.value - density) < 4.0 * rep.c_plus.stderr_);
  CHECK(rep.dof == 4);
  CHECK(rep.p_value > 0.001);
  CHECK(rep.ci99_lo > 0.0);
  for (const auto& row : rep.annuli) {
    CHECK(row.mass >= 0.0);
    CHECK(row.n_excursions >= 100);
  }
  // A trend in the density is detected.
  auto tilted = synthetic_cloud(500, 400, 12.0, density, 2, 0.15);
  CHECK(estimate_cplus(tilted, geometric(3, 7)).p_value < 0.01);
}

TEST_CASE("reliable range drops sparse annuli") {
  auto nu = synthetic_cloud(150, 40, 8.0, 1.0, 3);
  TailOptions opt;
  opt.min_excursions = 100;
  auto rep = estimate_cplus(nu, geometric(2, 10), 0.0, opt);
  CHECK(!rep.annuli.back().reliable);  // beyond the cloud
  CHECK(rep.n_reliable < rep.annuli.size());
  opt.min_excursions = 1000;
  try {
    estimate_cplus(nu, geometric(2, 6), 0.0, opt);
    FAIL("expected InsufficientSupport");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientSupport);
  }
}

TEST_CASE("lattice C+ divides by the span; ratio of n p annuli") {
  const double p = 1.0;
  auto nu = synthetic_cloud(500, 100, 12.0, 0.9, 4);
  auto rep = estimate_cplus(nu, geometric(3, 7), p);
  CHECK(std::abs(rep.c_plus.value - 0.9) < 4.0 * rep.c_plus.stderr_);
  auto r = lattice_ratio(nu, std::exp(3.0), p, 2);
  CHECK(std::abs(r.value - 2.0) < 3.0 * r.stderr_);
  CHECK(r.stderr_ > 0.0);
}

TEST_CASE("two_point lattice cloud: n-proportionality") {
  // The O(1/z) approach to the limit is below noise from e^5 on at this size.
  auto nu = real_cloud(MuSpec{1, TwoPointA{1.0}, ConstantB{{1.0}}, {}}, 9, 30000);
  for (double z : {std::exp(5.0), std::exp(6.0)}) {
    auto r = lattice_ratio(nu, z, 1.0, 2);
    CHECK(std::abs(r.value - 2.0) < 3.0 * r.stderr_);
  }
}

TEST_CASE("angular measure") {
  SECTION("positive B in d = 1 puts all mass on +1") {
    auto nu = real_cloud(MuSpec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}}, 11, 5000);
    auto h = angular_measure(nu, 1.0);
    REQUIRE(h.bins.size() == 2);
    CHECK(h.bins[1].weight == 1.0);
    CHECK(h.bins[0].weight == 0.0);
  }
  SECTION("symmetric B in d = 1 splits evenly") {
    auto nu = real_cloud(MuSpec{1, LogNormalA{1.0}, UniformB{{-1.0}, {1.0}}, {}}, 13, 10000);
    auto h = angular_measure(nu, 1.0);
    CHECK(std::abs(h.bins[1].weight - 0.5) < 3.0 * h.bins[1].stderr_);
    CHECK(h.bins[0].weight + h.bins[1].weight == Catch::Approx(1.0));
    // Halving z_min moves each bin by less than 3 se.
    auto h2 = angular_measure(nu, 0.5);
    CHECK(std::abs(h2.bins[1].weight - h.bins[1].weight) < 3.0 * h.bins[1].stderr_);
  }
  SECTION("d = 2 arcs and d = 3 orthants sum to one") {
    auto nu2 = real_cloud(MuSpec{2, LogNormalA{1.0}, GaussianB{{0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}, {}}, 15, 3000);
    auto h2 = angular_measure(nu2, 1.0, 16);
    CHECK(h2.bins.size() == 16);
    double s = 0.0;
    for (const auto& b : h2.bins) s += b.weight;
    CHECK(s == Catch::Approx(1.0));
    auto nu3 = real_cloud(MuSpec{3, LogNormalA{1.0}, GaussianB{{0, 0, 0}, {1, 0, 0, 0, 1, 0, 0, 0, 1}}, {}}, 17, 3000);
    auto h3 = angular_measure(nu3, 1.0);
    CHECK(h3.bins.size() == 8);
    s = 0.0;
    for (const auto& b : h3.bins) s += b.weight;
    CHECK(s == Catch::Approx(1.0));
  }
  SECTION("too few points") {
    auto nu = synthetic_cloud(10, 5, 2.0, 1.0, 5);
    try {
      angular_measure(nu, 100.0);
      FAIL("expected InsufficientSupport");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InsufficientSupport);
    }
  }
}

TEST_CASE("bound diagnostics") {
  const MuSpec spec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  auto nu = real_cloud(spec, 21, 20000);
  auto d = bound_diagnostics(nu, spec, geometric(2, 8));
  CHECK(d.g_status == "applicable");
  CHECK(std::isfinite(d.get("log_bound_sup")));
  CHECK(d.get("log_bound_sup") < 2.0);
  CHECK(d.get("positivity_min_lower99") > 0.0);
  CHECK(d.get("sv_ratio_2z_min") > 0.8);
  CHECK(d.get("sv_ratio_2z_max") < 1.25);
  CHECK(d.get("integral_ratio") <= 1.0);

  const MuSpec centered{2, LogNormalA{1.0}, GaussianB{{0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}, {}};
  auto nu2 = real_cloud(centered, 23, 2000);
  auto d2 = bound_diagnostics(nu2, centered, geometric(2, 5));
  CHECK(d2.g_status == "not_applicable");
  BoundOptions strict;
  strict.require_g = true;
  try {
    bound_diagnostics(nu2, centered, geometric(2, 5), strict);
    FAIL("expected ConfigNotCoveredByG");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigNotCoveredByG);
  }
}

TEST_CASE("log bound on a flat cloud starting at |u| = 1") {
  // nu{|u| < z} = c log z, so the ratio is c log z / (2 + log z).
  auto nu = synthetic_cloud(400, 200, 12.0, 1.0, 41);
  const MuSpec spec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  auto d = bound_diagnostics(nu, spec, geometric(2, 8));
  CHECK(d.get("log_bound_spread") == Catch::Approx((8.0 / 10.0) / (2.0 / 4.0)).epsilon(0.03));
  CHECK(d.get("sv_ratio_2z_min") == Catch::Approx(1.0).epsilon(0.05));
}

TEST_CASE("tail report is reproducible bit for bit") {
  const MuSpec spec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  auto a = estimate_cplus(real_cloud(spec, 31, 5000), geometric(2, 5));
  auto b = estimate_cplus(real_cloud(spec, 31, 5000), geometric(2, 5));
  for (std::size_t i = 0; i < a.annuli.size(); ++i) {
    CHECK(a.annuli[i].mass == b.annuli[i].mass);
    CHECK(a.annuli[i].stderr_ == b.annuli[i].stderr_);
  }
  CHECK(a.c_plus.value == b.c_plus.value);
}
