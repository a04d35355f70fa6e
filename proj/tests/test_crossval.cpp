#include <catch_amalgamated.hpp>

#include <cmath>

#include "critaffine/crossval.hpp"

using namespace critaffine;

namespace {

PointCloudMeasure real_cloud(const MuSpec& spec, std::uint64_t seed, std::int64_t m) {
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

}  // namespace

TEST_CASE("Phi_gamma closed values") {
  // r = (1 - |t|)_+ for the two-point law: int_{-1}^{1} (1 - |t|) e^{-|t|} dt = 2/e.
  auto two = RadialProfile::phi(TwoPointA{1.0}, 1.0);
  CHECK(two(0.0) == Catch::Approx(2.0 / kE).epsilon(1e-10));
  const Vec u{1.0};
  CHECK(RadialTestFn{two, std::nullopt}(u) == Catch::Approx(2.0 / kE).epsilon(1e-10));

  for (const ALaw& law : {ALaw{TwoPointA{1.0}}, ALaw{LogNormalA{1.0}}, ALaw{LogNormalA{0.5}}, ALaw{ShiftedExpMixA{2.0, 0.3}}}) {
    for (double gamma : {0.5, 1.0}) {
      auto p = RadialProfile::phi(law, gamma);
      // int Phi(a) da / a = sigma^2 * 2 / gamma.
      CHECK(p.integral() == Catch::Approx(2.0 * sigma2(law) / gamma).epsilon(1e-6));
      // Interpolated values agree with direct quadrature.
      for (double s : {-3.2101, -0.0037, 0.41, 1.999, 7.3}) CHECK(p(s) == Catch::Approx(p.direct(s)).epsilon(1e-8).margin(1e-14));
    }
  }
}

TEST_CASE("Phi_gamma decays at rate gamma in log-radius and is radial") {
  const double gamma = 0.7;
  auto p = RadialProfile::phi(LogNormalA{1.0}, gamma);
  for (double s : {15.0, 40.0, 90.0}) {
    CHECK(p(s + 1.0) / p(s) == Catch::Approx(std::exp(-gamma)).epsilon(1e-9));
    CHECK(p(-s - 1.0) / p(-s) == Catch::Approx(std::exp(-gamma)).epsilon(1e-9));
    CHECK(p(s) == Catch::Approx(p.direct(s)).epsilon(1e-6));
  }
  RadialTestFn phi{p, std::nullopt};
  const Vec a{3.0, 4.0}, b{-5.0, 0.0}, c{0.0, 5.0};
  CHECK(phi(a) == phi(b));
  CHECK(phi(a) == phi(c));
  // Envelope: Phi <= max(Phi) min(1, |u|^{+-gamma}) up to a constant.
  double peak = 0.0;
  for (double s = -5; s <= 5; s += 0.01) peak = std::max(peak, p(s));
  for (double s = -30; s <= 30; s += 0.5) CHECK(p(s) <= 3.0 * peak * std::exp(-gamma * std::max(0.0, std::abs(s) - 3.0)));
}

TEST_CASE("cross-check on a lognormal cloud") {
  const MuSpec spec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  auto nu = real_cloud(spec, 3, 20000);
  CrossvalOptions opt;
  opt.hist.seed = 99;
  auto rep = cplus_crosscheck(spec, nu, opt);

  // psi integrates to zero.
  CHECK(std::abs(rep.J_psi.value) < 4.0 * rep.J_psi.stderr_ + 1e-3);
  // The Poisson equation holds on the cloud draw by draw up to noise.
  CHECK(rep.poisson_max_z < 4.5);
  CHECK(rep.identity_max_z < 4.5);
  // f vanishes far to the left and is positive on the plateau.
  CHECK(std::abs(rep.f_left.value) < 0.02 * rep.T_plateau.value);
  CHECK(rep.T_plateau.value > 0.0);
  CHECK(rep.denominator == Catch::Approx(2.0).epsilon(1e-6));
  CHECK(std::isfinite(rep.fubini.value));
  CHECK(rep.fubini.value > 0.0);
  CHECK(rep.fit_right.ok);
  CHECK(rep.clamped_mass == 0.0);
  INFO("T plateau " << rep.T_plateau.value << " +- " << rep.T_plateau.stderr_ << ", T potential " << rep.T_potential.value
                    << " +- " << rep.T_potential.stderr_ << ", C+ mc " << rep.cplus_mc.value);
  CHECK(rep.rel_diff_T < 0.2);
}

TEST_CASE("f_phi and psi_phi match direct sums over the cloud") {
  const MuSpec spec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  auto nu = real_cloud(spec, 7, 500);
  auto phi = build_phi(spec, 1.0);
  GridFn grid = GridFn::uniform(-4.0, 4.0, 0.5);
  auto f = estimate_f_phi(spec, nu, phi, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double x = grid.x(i);
    auto direct = integrate(nu, [&](std::span<const double> u) { return phi.profile(std::log(norm(u)) - x); });
    // Cloud-in-cell error is O(h^2 p'').
    CHECK(f.est.values[i] == Catch::Approx(direct.value).epsilon(1e-4));
  }
  // Same seed, same psi; results are independent of worker count.
  HistOptions h1, h4;
  h4.workers = 4;
  auto p1 = estimate_psi_phi(spec, nu, phi, grid, 5, h1);
  auto p4 = estimate_psi_phi(spec, nu, phi, grid, 5, h4);
  CHECK(p1.est.values == p4.est.values);
}

TEST_CASE("cross-check rejects lattice laws") {
  const MuSpec spec{1, TwoPointA{1.0}, ConstantB{{1.0}}, {}};
  auto nu = real_cloud(spec, 3, 200);
  try {
    cplus_crosscheck(spec, nu, {});
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
  }
}
