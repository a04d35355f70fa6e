#include <catch_amalgamated.hpp>

#include <cmath>

#include "critaffine/model.hpp"

using namespace critaffine;
using Catch::Approx;

namespace {

MuSpec two_point(double p, double b = 1.0) { return MuSpec{1, TwoPointA{p}, ConstantB{{b}}, {}}; }
MuSpec lognormal(double s, double b = 1.0) { return MuSpec{1, LogNormalA{s}, ConstantB{{b}}, {}}; }

}  // namespace

TEST_CASE("validate two_point reports lattice span and variance") {
  auto rep = validate_spec(two_point(1.0));
  REQUIRE(rep.ok);
  CHECK(rep.lattice_span == 1.0);
  CHECK(rep.sigma2 == 1.0);
}

TEST_CASE("validate lognormal is aperiodic with unit variance") {
  auto rep = validate_spec(lognormal(1.0));
  REQUIRE(rep.ok);
  CHECK(rep.lattice_span == 0.0);
  CHECK(rep.sigma2 == 1.0);
}

TEST_CASE("constant multiplier 2 is non critical") {
  MuSpec spec{1, ConstantA{2.0}, ConstantB{{1.0}}, {}};
  auto rep = validate_spec(spec);
  CHECK_FALSE(rep.ok);
  CHECK(rep.failure == ErrorKind::NonCritical);
  REQUIRE_THROWS_AS(require_valid(spec), Error);
  try {
    require_valid(spec);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonCritical);
    CHECK(exit_code(e.kind()) == 2);
  }
}

TEST_CASE("degenerate laws are rejected") {
  CHECK(validate_spec(MuSpec{1, ConstantA{1.0}, ConstantB{{1.0}}, {}}).failure == ErrorKind::Degenerate);
  CHECK(validate_spec(MuSpec{1, LogNormalA{1.0}, ConstantB{{0.0}}, {}}).failure == ErrorKind::Degenerate);
  CHECK(validate_spec(MuSpec{1, DiscreteA{{0.0}, {1.0}}, ConstantB{{1.0}}, {}}).failure == ErrorKind::Degenerate);
  CHECK(validate_spec(MuSpec{1, LogNormalA{-1.0}, ConstantB{{1.0}}, {}}).failure == ErrorKind::MomentFailure);
  CHECK(validate_spec(MuSpec{1, DiscreteA{{1.0, -1.0}, {0.6, 0.4}}, ConstantB{{1.0}}, {}}).failure ==
        ErrorKind::NonCritical);
}

TEST_CASE("discrete lattice span is the gcd of the support") {
  CHECK(lattice_span(DiscreteA{{2.0, -1.0}, {1.0 / 3, 2.0 / 3}}) == Approx(1.0));
  CHECK(lattice_span(DiscreteA{{0.5, -1.5}, {0.75, 0.25}}) == Approx(0.5));
  CHECK(lattice_span(DiscreteA{{1.0, -std::sqrt(2.0)}, {std::sqrt(2.0) / (1 + std::sqrt(2.0)), 1 / (1 + std::sqrt(2.0))}}) == 0.0);
}

TEST_CASE("affine group arithmetic") {
  AffinePair g{{3.0}, 2.0};
  CHECK(act(g, 1.0) == 5.0);
  CHECK(act(AffinePair::identity(1), 7.5) == 7.5);
  auto h = compose(AffinePair{{1.0}, 2.0}, AffinePair{{3.0}, 4.0});
  CHECK(h.b[0] == 7.0);
  CHECK(h.a == 8.0);
}

TEST_CASE("group laws hold on random triples") {
  RandomStream rs = RandomStream::derive(11, {1});
  for (int t = 0; t < 200; ++t) {
    auto draw = [&] {
      AffinePair g{{rs.normal(), rs.normal()}, std::exp(rs.normal())};
      return g;
    };
    auto f = draw(), g = draw(), h = draw();
    auto l = compose(compose(f, g), h);
    auto r = compose(f, compose(g, h));
    CHECK(l.a == Approx(r.a).epsilon(1e-14));
    CHECK(l.b[0] == Approx(r.b[0]).epsilon(1e-12).margin(1e-12));
    CHECK(l.b[1] == Approx(r.b[1]).epsilon(1e-12).margin(1e-12));
    Vec x{rs.normal(), rs.normal()};
    auto lhs = act(compose(g, h), x);
    auto rhs = act(g, act(h, x));
    CHECK(lhs[0] == Approx(rhs[0]).epsilon(1e-12).margin(1e-12));
    CHECK(lhs[1] == Approx(rhs[1]).epsilon(1e-12).margin(1e-12));
  }
}

TEST_CASE("sample_pair respects supports") {
  RandomStream rs = RandomStream::derive(5, {2});
  auto spec = two_point(1.0);
  for (int i = 0; i < 1000; ++i) {
    auto g = sample_pair(spec, rs);
    CHECK(g.b[0] == 1.0);
    const double k = std::log(g.a);
    CHECK(std::abs(std::abs(k) - 1.0) < 1e-15);
  }
  auto ln = lognormal(1.0);
  for (int i = 0; i < 1000; ++i) CHECK(sample_pair(ln, rs).a > 0.0);
}

TEST_CASE("sampling is deterministic given the stream") {
  auto spec = lognormal(1.0);
  RandomStream a = RandomStream::derive(9, {3, 4});
  RandomStream b = RandomStream::derive(9, {3, 4});
  for (int i = 0; i < 100; ++i) {
    auto x = sample_pair(spec, a), y = sample_pair(spec, b);
    CHECK(x.a == y.a);
    CHECK(x.b[0] == y.b[0]);
  }
}

TEST_CASE("Monte Carlo criticality within 3 sigma / 1000") {
  const MuSpec specs[] = {
      lognormal(1.0), two_point(1.0), MuSpec{1, ShiftedExpMixA{1.5, 0.3}, ConstantB{{1.0}}, {}},
      MuSpec{1, DiscreteA{{2.0, -1.0}, {1.0 / 3, 2.0 / 3}}, ConstantB{{1.0}}, {}}};
  for (const auto& spec : specs) {
    PairSampler sampler(spec);
    RandomStream rs = RandomStream::derive(1, {static_cast<std::uint64_t>(spec.a_law.index())});
    double b = 0.0, sum = 0.0, sum2 = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) {
      const double la = sampler.draw(rs, &b);
      sum += la;
      sum2 += la * la;
    }
    const double sigma = std::sqrt(sigma2(spec.a_law));
    CHECK(std::abs(sum / n) <= 3.0 * sigma / 1000.0);
    CHECK(sum2 / n == Approx(sigma * sigma).epsilon(0.01));
  }
}

TEST_CASE("lattice draws lie on the lattice") {
  RandomStream rs = RandomStream::derive(3, {});
  auto spec = two_point(0.7);
  PairSampler sampler(spec);
  double b = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double la = sampler.draw(rs, &b);
    CHECK(std::abs(la / 0.7 - std::round(la / 0.7)) < 1e-12);
  }
}

TEST_CASE("characteristic function closed forms") {
  for (double t : {0.0, 0.3, 1.0, 2.5}) {
    CHECK(char_fn(TwoPointA{1.0}, t).real() == Approx(std::cos(t)).margin(1e-15));
    CHECK(char_fn(LogNormalA{1.3}, t).real() == Approx(std::exp(-0.5 * 1.69 * t * t)).margin(1e-15));
    const ALaw laws[] = {TwoPointA{1.0}, LogNormalA{1.0}, ShiftedExpMixA{2.0, 0.2},
                         DiscreteA{{2.0, -1.0}, {1.0 / 3, 2.0 / 3}}};
    for (const auto& law : laws) {
      auto c = char_fn(law, t);
      auto om = one_minus_char_fn(law, t);
      CHECK(std::abs(1.0 - c - om) < 1e-14);
    }
  }
  const ALaw all[] = {TwoPointA{1.0}, LogNormalA{1.0}, ShiftedExpMixA{2.0, 0.2}, DiscreteA{{2.0, -1.0}, {1.0 / 3, 2.0 / 3}}};
  for (const auto& law : all) CHECK(std::abs(char_fn(law, 0.0) - cplx(1.0, 0.0)) < 1e-15);
}

TEST_CASE("exp-mix characteristic function matches Monte Carlo") {
  MuSpec spec{1, ShiftedExpMixA{1.5, 0.3}, ConstantB{{1.0}}, {}};
  PairSampler sampler(spec);
  RandomStream rs = RandomStream::derive(77, {});
  const int n = 400000;
  double b = 0.0;
  cplx acc = 0.0;
  const double theta = 0.8;
  for (int i = 0; i < n; ++i) acc += std::exp(cplx(0.0, -theta * sampler.draw(rs, &b)));
  acc /= static_cast<double>(n);
  const auto exact = char_fn(spec.a_law, theta);
  CHECK(std::abs(acc - exact) < 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("one minus char fn is accurate near zero") {
  const double t = 1e-6;
  CHECK(one_minus_char_fn(LogNormalA{1.0}, t).real() == Approx(0.5e-12).epsilon(1e-9));
  CHECK(one_minus_char_fn(TwoPointA{1.0}, t).real() == Approx(0.5e-12).epsilon(1e-9));
  CHECK(one_minus_char_fn(ShiftedExpMixA{1.0, 0.5}, t).real() == Approx(0.5e-12).epsilon(1e-6));
}

TEST_CASE("recentring conjugates the law") {
  MuSpec spec{1, TwoPointA{1.0}, ConstantB{{1.0}}, {2.0}};
  PairSampler sampler(spec);
  RandomStream rs = RandomStream::derive(4, {});
  double b = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double la = sampler.draw(rs, &b);
    // (x0,1)(b,a)(-x0,1) = (x0 + b - a x0, a)
    CHECK(b == Approx(1.0 + (1.0 - std::exp(la)) * 2.0).epsilon(1e-14));
  }
}

TEST_CASE("multivariate b laws have the right dimension and moments") {
  MuSpec spec{2, LogNormalA{1.0}, GaussianB{{1.0, -1.0}, {2.0, 0.5, 0.5, 1.0}}, {}};
  REQUIRE(validate_spec(spec).ok);
  PairSampler sampler(spec);
  RandomStream rs = RandomStream::derive(8, {});
  double b[2];
  double m0 = 0, m1 = 0, c01 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    sampler.draw(rs, b);
    m0 += b[0];
    m1 += b[1];
    c01 += (b[0] - 1.0) * (b[1] + 1.0);
  }
  CHECK(m0 / n == Approx(1.0).margin(0.02));
  CHECK(m1 / n == Approx(-1.0).margin(0.02));
  CHECK(c01 / n == Approx(0.5).margin(0.03));
  MuSpec bad{2, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  CHECK(validate_spec(bad).failure == ErrorKind::InvalidConfig);
}
