#include <catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <functional>

#include "critaffine/walk.hpp"

using namespace critaffine;
using Catch::Approx;

namespace {

MuSpec two_point(double p, double b = 1.0) { return MuSpec{1, TwoPointA{p}, ConstantB{{b}}, {}}; }

/// Source with a fixed step sequence (then -1 forever).
struct ForcedSteps {
  std::vector<double> steps;
  double b = 1.0;
  std::size_t k = 0;
  int dim() const { return 1; }
  double draw(RandomStream&, double* out) {
    out[0] = b;
    return k < steps.size() ? steps[k++] : -1.0;
  }
};

/// Brute-force path enumeration: sum_i s^i P(L > i) and sum_i s^i P(epoch at i).
struct Brute {
  double lhs = 0.0, weak = 0.0, strict = 0.0;
};

Brute brute_force(const StepLaw& law, double s, int depth) {
  Brute out;
  std::function<void(int, double, double, double, bool)> rec = [&](int i, double S, double max_s, double p,
                                                                     bool alive) {
    const double w = std::pow(s, i) * p;
    if (alive) out.lhs += w;
    if (i == 0) {
      out.weak += w;
      out.strict += w;
    }
    if (i + 1 == depth) return;
    for (std::size_t k = 0; k < law.values.size(); ++k) {
      const double ns = S + law.values[k];
      const double np = p * law.probs[k];
      const double w1 = std::pow(s, i + 1) * np;
      if (ns >= max_s - 1e-12) out.weak += w1;
      if (ns > max_s + 1e-12) out.strict += w1;
      rec(i + 1, ns, std::max(max_s, ns), np, alive && ns >= -1e-12);
    }
  };
  rec(0, 0.0, 0.0, 1.0, true);
  return out;
}

}  // namespace

TEST_CASE("two_point excursion length law matches enumeration") {
  // Enumeration of the +-1 walk to depth 9: P(L = n) for odd n is the
  // first-passage probability C_{(n-1)/2} / 2^n.
  double p_exact[10] = {};
  std::function<void(int, int, double)> rec = [&](int n, int s, double p) {
    if (n == 9) return;
    for (int step : {1, -1}) {
      const int ns = s + step;
      if (ns < 0) {
        p_exact[n + 1] += p * 0.5;
      } else {
        rec(n + 1, ns, p * 0.5);
      }
    }
  };
  rec(0, 0, 1.0);
  CHECK(p_exact[1] == 0.5);
  CHECK(p_exact[3] == 0.125);
  CHECK(p_exact[5] == 0.0625);

  auto spec = two_point(1.0);
  PairSampler src(spec);
  const int n = 200000;
  int counts[10] = {};
  Vec start{0.0};
  for (int i = 0; i < n; ++i) {
    RandomStream rs = RandomStream::derive(1, {stream_tag::generic, static_cast<std::uint64_t>(i)});
    Vec exit(1);
    auto end = walk_excursion(src, start, 9, rs, exit.data(), [](auto, auto, auto, auto) {});
    if (!end.truncated) counts[end.length]++;
  }
  for (int k : {1, 3, 5, 7, 9}) {
    const double p = p_exact[k];
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(counts[k] / static_cast<double>(n) - p) < 4 * se);
  }
}

TEST_CASE("forced descent gives L = 1") {
  ForcedSteps src{{}, 1.0};
  RandomStream rs;
  Vec start{0.25};
  auto ex = run_excursion(src, start, 100, rs);
  CHECK(ex.L == 1);
  CHECK_FALSE(ex.truncated);
  REQUIRE(ex.size() == 1);
  REQUIRE(ex.path.size() == 1);
  CHECK(ex.path[0] == 0.25);
  CHECK(ex.exit_point[0] == Approx(std::exp(-1.0) * 0.25 + 1.0));
}

TEST_CASE("excursion invariants: ladder, consistency, path recursion") {
  auto spec = MuSpec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  for (std::uint64_t i = 0; i < 300; ++i) {
    RandomStream rs = RandomStream::derive(2, {i});
    Vec start{0.5};
    auto ex = run_excursion(spec, start, 5000, rs);
    const std::size_t n_stop = ex.size();
    REQUIRE(ex.log_a.size() == n_stop);
    double s = 0.0;
    for (std::size_t k = 0; k < n_stop; ++k) {
      s += ex.log_a[k];
      CHECK(s == ex.walk[k + 1]);
    }
    for (std::size_t k = 0; k + 1 < ex.walk.size(); ++k) CHECK(ex.walk[k] >= 0.0);
    if (!ex.truncated) {
      CHECK(ex.walk.back() < 0.0);
      CHECK(static_cast<std::size_t>(ex.L) == n_stop);
    } else {
      CHECK(ex.walk.back() >= 0.0);
    }
    const std::size_t npts = ex.path.size();
    for (std::size_t k = 1; k < npts; ++k) {
      const double expected = std::exp(ex.log_a[k - 1]) * ex.path[k - 1] + ex.b[k - 1];
      CHECK(ex.path[k] == Approx(expected).epsilon(1e-12));
    }
    for (std::size_t k = 1; k < ex.ladder_up.size(); ++k) CHECK(ex.ladder_up[k] > ex.ladder_up[k - 1]);
  }
}

TEST_CASE("very high excursions stay finite through the scaled representation") {
  // Climb to S = 1000, then descend: X_L must equal the direct affine result.
  std::vector<double> steps(1000, 1.0);
  for (int i = 0; i < 1001; ++i) steps.push_back(-1.0);
  ForcedSteps src{steps, 1.0};
  RandomStream rs;
  Vec start{0.0};
  Vec exit(1);
  auto end = walk_excursion(src, start, 10000, rs, exit.data(), [](auto, auto, auto, auto) {});
  REQUIRE_FALSE(end.truncated);
  CHECK(end.length == 2001);
  // Closed form: sum_k e^{S_L - S_k} over k = 1..L with S_k the forced walk.
  double expected = 0.0;
  double s = 0.0;
  std::vector<double> walk;
  for (double st : steps) {
    s += st;
    walk.push_back(s);
  }
  for (int k = 0; k < 2001; ++k) expected += std::exp(-1.0 - walk[k]);
  CHECK(exit[0] == Approx(expected).epsilon(1e-10));
  CHECK(std::isfinite(exit[0]));
}

TEST_CASE("truncation probability scales like c / sqrt(n_max)") {
  auto spec = two_point(1.0);
  PairSampler src(spec);
  const std::int64_t n_max = 10000;
  const int n = 40000;
  int truncated = 0;
  Vec start{0.0};
  Vec exit(1);
  for (int i = 0; i < n; ++i) {
    RandomStream rs = RandomStream::derive(3, {static_cast<std::uint64_t>(i)});
    truncated += walk_excursion(src, start, n_max, rs, exit.data(), [](auto, auto, auto, auto) {}).truncated;
  }
  const double c = truncated / static_cast<double>(n) * std::sqrt(static_cast<double>(n_max));
  CHECK(c >= 0.5);
  CHECK(c <= 1.1);
}

TEST_CASE("ladder pair: one-step excursion and contraction") {
  ForcedSteps src{{}, 1.0};
  RandomStream rs;
  Vec start{0.0};
  auto lp = ladder_pair(src, start, 10, rs);
  CHECK(lp.q[0] == 1.0);
  CHECK(lp.m == Approx(std::exp(-1.0)));

  auto spec = MuSpec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  PairSampler ps(spec);
  int truncated = 0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    RandomStream r = RandomStream::derive(4, {i});
    try {
      auto p = ladder_pair(ps, start, 1'000'000, r);
      if (!(p.m < 1.0)) FAIL("m >= 1");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::Truncated);
      ++truncated;
    }
  }
  // P(L > 10^6) is of order 10^-3.
  CHECK(truncated < 300);
}

TEST_CASE("ladder pair throws Truncated") {
  ForcedSteps src{std::vector<double>(100, 1.0), 1.0};
  RandomStream rs;
  Vec start{0.0};
  try {
    ladder_pair(src, start, 50, rs);
    FAIL("expected Truncated");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Truncated);
  }
}

TEST_CASE("two_point ladder height is exactly -1") {
  auto spec = two_point(1.0);
  PairSampler ps(spec);
  Vec start{0.0};
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    RandomStream r = RandomStream::derive(5, {static_cast<std::uint64_t>(i)});
    sum += std::log(ladder_pair(ps, start, 100'000'000, r).m);
  }
  CHECK(sum / n == Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("duality: symmetric two_point with s = 1/2") {
  auto t0 = std::chrono::steady_clock::now();
  auto res = duality_check(two_point(1.0), 0.5, 20);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double target = 2.0 * (std::sqrt(3.0) - 1.0);
  CHECK(std::abs(res.lhs - res.rhs) <= 2.0 * std::pow(2.0, -20));
  CHECK(std::abs(res.lhs - target) < 1e-5);
  CHECK(std::abs(res.rhs - target) < 1e-5);
  CHECK(res.bound == Approx(std::pow(0.5, 20) / 0.5));
  CHECK(secs < 10.0);
  // Generating function: sum_i s^i P(L > i) = (1 - E s^L) / (1 - s).
  const double s = 0.5;
  const double gen = (1.0 - (1.0 - std::sqrt(1.0 - s * s)) / s) / (1.0 - s);
  CHECK(res.lhs <= gen + 1e-15);
  CHECK(gen - res.lhs <= res.bound);
}

TEST_CASE("duality: strict ascent differs on the lattice") {
  auto strict = duality_check(two_point(1.0), 0.5, 20, AscentKind::Strict);
  CHECK(std::abs(strict.rhs - (std::sqrt(3.0) + 1.0) / 2.0) < 1e-5);
  CHECK(std::abs(strict.lhs - strict.rhs) > 0.05);
}

TEST_CASE("duality: s to zero leaves only the first term") {
  auto res = duality_check(two_point(1.0), 1e-9, 10);
  CHECK(res.lhs == Approx(1.0).epsilon(1e-8));
  CHECK(res.rhs == Approx(1.0).epsilon(1e-8));
}

TEST_CASE("duality: asymmetric centred steps match brute force") {
  StepLaw law{{2.0, -1.0}, {1.0 / 3, 2.0 / 3}};
  auto res = duality_check(law, 0.5, 20);
  CHECK(std::abs(res.lhs - res.rhs) <= 2.0 * res.bound);
  auto brute = brute_force(law, 0.5, 14);
  auto res14 = duality_check(law, 0.5, 14);
  CHECK(res14.lhs == Approx(brute.lhs).epsilon(1e-13));
  CHECK(res14.rhs == Approx(brute.weak).epsilon(1e-13));
  auto strict14 = duality_check(law, 0.5, 14, AscentKind::Strict);
  CHECK(strict14.rhs == Approx(brute.strict).epsilon(1e-13));
}

TEST_CASE("duality property over random small-support centred laws") {
  RandomStream rs = RandomStream::derive(6, {});
  for (int t = 0; t < 25; ++t) {
    // Positive value u and negative value -v with probabilities making mean 0,
    // plus an optional middle atom at 0.
    const double u = 0.5 + 2.0 * rs.uniform();
    const double v = 0.5 + 2.0 * rs.uniform();
    const double p0 = rs.coin() ? 0.3 * rs.uniform() : 0.0;
    const double pu = (1.0 - p0) * v / (u + v);
    const double pv = (1.0 - p0) * u / (u + v);
    StepLaw law{{u, -v}, {pu, pv}};
    if (p0 > 0) {
      law.values.push_back(0.0);
      law.probs.push_back(p0);
    }
    const double s = 0.2 + 0.6 * rs.uniform();
    auto res = duality_check(law, s, 12);
    CHECK(std::abs(res.lhs - res.rhs) <= 2.0 * res.bound);
    auto brute = brute_force(law, s, 10);
    auto r10 = duality_check(law, s, 10);
    CHECK(r10.lhs == Approx(brute.lhs).epsilon(1e-12));
    CHECK(r10.rhs == Approx(brute.weak).epsilon(1e-12));
  }
}

TEST_CASE("duality rejects depth above 25 and continuous laws") {
  CHECK_THROWS_AS(duality_check(two_point(1.0), 0.5, 26), Error);
  try {
    duality_check(two_point(1.0), 0.5, 26);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DepthOverflow);
  }
  CHECK_THROWS_AS(duality_check(MuSpec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}}, 0.5, 10), Error);
}
