// Acceptance gate: one PASS/FAIL line per criterion.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "critaffine/critaffine.hpp"

using namespace critaffine;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int id, bool pass, const std::string& what, double secs) {
  std::printf("%s %2d  %s  [%.1fs]\n", pass ? "PASS" : "FAIL", id, what.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

/// Runs a criterion; an exception is a failure with its message.
void criterion(int id, const std::function<std::pair<bool, std::string>()>& body) {
  Clock c;
  try {
    auto [ok, msg] = body();
    report(id, ok, msg, c.seconds());
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what(), c.seconds());
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const MuSpec kLogNormal{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
const MuSpec kTwoPoint{1, TwoPointA{1.0}, ConstantB{{1.0}}, {}};
const MuSpec kSymmetric{1, LogNormalA{1.0}, UniformB{{-1.0}, {1.0}}, {}};
constexpr std::int64_t kM = 1'000'000;

PointCloudMeasure cloud(const MuSpec& spec, std::int64_t m = kM) {
  NuLOptions lo;
  lo.n_samples = 10'000;
  lo.n_max = 1'000'000;
  lo.seed = 1;
  auto nuL = sample_nu_L(spec, lo);
  NuOptions o;
  o.m_excursions = m;
  o.n_max = 1'000'000;
  o.seed = 1;
  return estimate_nu(spec, nuL, o);
}

Vec logs_to_z(int a, int b) {
  Vec z;
  for (int k = a; k <= b; ++k) z.push_back(std::exp(static_cast<double>(k)));
  return z;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  std::printf("acceptance: d=1, seed=1, m_excursions=%lld, n_max=1e6 unless stated\n", static_cast<long long>(kM));

  criterion(1, [] {
    Clock c;
    auto r = duality_check(kTwoPoint, 0.5, 20);
    const double target = 2.0 * (std::sqrt(3.0) - 1.0);
    const double diff = std::abs(r.lhs - r.rhs);
    const bool ok = diff <= 2.0 * std::pow(2.0, -20) && std::abs(r.lhs - target) < 1e-5 &&
                    std::abs(r.rhs - target) < 1e-5 && c.seconds() < 10.0;
    return std::pair{ok, fmt("duality two_point(1) s=1/2 depth=20: lhs=%.8f rhs=%.8f |diff|=%.2e target=%.6f", r.lhs, r.rhs,
                             diff, target)};
  });

  criterion(2, [] {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double x = -2.0 + 4.0 * i / 999.0;
      worst = std::max(worst, std::abs(r_kernel(TwoPointA{1.0}, x) - std::max(0.0, 1.0 - std::abs(x))));
    }
    const double r0 = r_kernel(LogNormalA{1.0}, 0.0);
    const double err0 = std::abs(r0 - std::sqrt(2.0 / kPi));
    return std::pair{worst <= 1e-12 && err0 <= 1e-10,
                     fmt("r closed forms: two_point max err %.1e on 1000 points, normal r(0) err %.1e", worst, err0)};
  });

  criterion(3, [] {
    double worst = 0.0;
    for (const ALaw& law : {ALaw{TwoPointA{1.0}}, ALaw{LogNormalA{1.0}}}) {
      const double mx = r_support_radius(law);
      for (int i = 0; i <= 99; ++i) {
        const double t = 0.1 + 9.9 * i / 99.0;
        const cplx num = transform_numeric([&](double x) { return r_kernel(law, x); }, t, -mx, mx, 1e-13);
        const cplx closed = -2.0 * (char_fn(law, t) - 1.0) / (t * t);
        worst = std::max(worst, std::abs(num - closed));
      }
    }
    return std::pair{worst < 1e-8, fmt("Fourier identity on theta in [0.1, 10], both families: max err %.1e", worst)};
  });

  criterion(4, [] {
    const ALaw law = TwoPointA{1.0};
    auto psi = psi_rshift(law, 2.0);
    auto cert = certify_F(law, psi);
    QuadParams q;
    auto res = potential_A(law, psi, cert, GridFn::symmetric(40.0, 0.05), q);
    Vec xs;
    for (std::size_t i = 0; i < res.A.size(); ++i)
      if (std::abs(res.A.x(i)) <= 39.0 + 1e-9) xs.push_back(res.A.x(i));
    double resid = 0.0;
    for (double r : poisson_residual(law, [&](double x) { return res.A.at(x); }, psi, xs)) resid = std::max(resid, std::abs(r));
    const double lo = res.A.values.front(), hi = res.A.values.back();
    const bool ok = resid < 1e-6 && std::abs(lo + 2.0) < 1e-4 && std::abs(hi - 2.0) < 1e-4;
    return std::pair{ok, fmt("Poisson residual %.1e on the grid; A(-40)=%.8f A(40)=%.8f", resid, lo, hi)};
  });

  criterion(5, [] {
    const ALaw law = LogNormalA{1.0};
    auto psi = psi_r(law);
    auto cert = certify_F(law, psi);
    PotentialEvaluator ev(law, psi, cert, QuadParams{});
    const double p = ev.evaluate(60.0).value / 60.0, m = ev.evaluate(-60.0).value / -60.0;
    // A psi(x)/x -> +1 at +60 and -1 at -60 means A psi(-60)/(-60) -> -1.
    const bool ok = std::abs(p - 1.0) < 0.02 && std::abs(m + 1.0) < 0.02;
    return std::pair{ok, fmt("lognormal(1), psi=r: A(60)/60=%.5f A(-60)/(-60)=%.5f", p, m)};
  });

  {
    Clock sim;
    auto nu = cloud(kLogNormal);
    const double sim_secs = sim.seconds();
    std::printf("      lognormal cloud: %zu points, %zu clusters, %.1fs\n", nu.size(), nu.n_clusters(), sim_secs);

    criterion(6, [&] {
      Clock c;
      auto rep = estimate_cplus(nu, logs_to_z(3, 7));
      bool positive = rep.n_reliable == rep.annuli.size();
      std::string masses;
      for (const auto& row : rep.annuli) {
        positive = positive && row.mass - 2.576 * row.stderr_ > 0.0;
        masses += fmt(" %.4f(%.4f)", row.mass, row.stderr_);
      }
      const double secs = sim_secs + c.seconds();
      const bool ok = rep.p_value > 0.01 && positive && secs < 600.0;
      return std::pair{ok, fmt("annuli e^3..e^7:%s chi2=%.2f dof=%d p=%.2e, positive99=%d, %.0fs", masses.c_str(), rep.chi2,
                               rep.dof, rep.p_value, positive ? 1 : 0, secs)};
    });

    criterion(8, [&] {
      auto d = bound_diagnostics(nu, kLogNormal, logs_to_z(2, 8));
      const double spread = d.get("log_bound_spread");
      return std::pair{spread < 2.0, fmt("nu{|u|<z}/(2+log z) over e^2..e^8: min %.4f max %.4f, factor %.3f",
                                          d.get("log_bound_min"), d.get("log_bound_sup"), spread)};
    });

    CrossvalReport cv;
    bool have_cv = false;
    criterion(9, [&] {
      CrossvalOptions o;
      o.hist.seed = 1;
      cv = cplus_crosscheck(kLogNormal, nu, o);
      have_cv = true;
      const bool ok = cv.rel_diff_cplus < 0.2 && cv.rel_diff_T < 0.2 && cv.positive99();
      return std::pair{ok, fmt("C+ pot %.4f(%.4f) vs MC %.4f(%.4f) rel %.3f; T plateau %.4f(%.4f) vs -2K/s2 %.4f(%.4f) rel %.3f",
                               cv.cplus_pot.value, cv.cplus_pot.stderr_, cv.cplus_mc.value, cv.cplus_mc.stderr_,
                               cv.rel_diff_cplus, cv.T_plateau.value, cv.T_plateau.stderr_, cv.T_potential.value,
                               cv.T_potential.stderr_, cv.rel_diff_T)};
    });

    criterion(10, [&] {
      if (!have_cv) throw Error(ErrorKind::InvalidConfig, "cross-check did not run");
      const double z = std::abs(cv.J_psi.value) / cv.J_psi.stderr_;
      return std::pair{z <= 3.0, fmt("J(psi_Phi1) = %.2e +- %.2e (%.2f se)", cv.J_psi.value, cv.J_psi.stderr_, z)};
    });

    criterion(11, [&] {
      auto pos = angular_measure(nu, 1.0, 2);
      auto sym_cloud = cloud(kSymmetric);
      auto sym = angular_measure(sym_cloud, 1.0, 2);
      const double w = sym.bins[1].weight, se = sym.bins[1].stderr_;
      const bool ok = pos.bins[1].weight == 1.0 && std::abs(w - 0.5) <= 3.0 * se;
      return std::pair{ok, fmt("B=1: Sigma(+1)=%.17g; symmetric B: Sigma(+1)=%.4f +- %.4f", pos.bins[1].weight, w, se)};
    });
  }

  criterion(7, [] {
    auto nu = cloud(kTwoPoint);
    bool ok = true;
    std::string msg = "two_point(1) ratio mass(z,e^2z]/mass(z,ez]:";
    for (int k : {3, 5}) {
      auto r = lattice_ratio(nu, std::exp(static_cast<double>(k)), 1.0, 2);
      ok = ok && std::abs(r.value - 2.0) <= 3.0 * r.stderr_;
      msg += fmt(" z=e^%d %.4f +- %.4f (%.1f se)", k, r.value, r.stderr_, std::abs(r.value - 2.0) / r.stderr_);
    }
    return std::pair{ok, msg};
  });

  criterion(12, [] {
    const std::string cli = CRITAFFINE_CLI_PATH, configs = CRITAFFINE_CONFIG_DIR;
    const auto root = fs::temp_directory_path() / ("critaffine_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const std::vector<std::string> steps = {"validate", "simulate", "tail", "crossval", "potential", "duality"};
    const char* scale = " --run.m_excursions=100000";
    for (int w : {1, 8})
      for (const auto& s : steps) {
        const auto dir = root / ("w" + std::to_string(w));
        const std::string cfg = s == "duality" ? configs + "/two_point.json" : configs + "/lognormal.json";
        const std::string cmd = cli + " " + s + " -c " + cfg + scale + " -j " + std::to_string(w) + " --out " + dir.string() +
                                " > /dev/null 2>&1";
        const int st = std::system(cmd.c_str());
        if (!WIFEXITED(st) || WEXITSTATUS(st) != 0)
          return std::pair{false, fmt("%s failed with workers=%d", s.c_str(), w)};
      }
    std::size_t n = 0, same = 0;
    std::string diff;
    for (const auto& e : fs::directory_iterator(root / "w1")) {
      ++n;
      const auto other = root / "w8" / e.path().filename();
      if (fs::exists(other) && slurp(e.path()) == slurp(other))
        ++same;
      else
        diff += " " + e.path().filename().string();
    }
    fs::remove_all(root);
    return std::pair{n > 0 && same == n, fmt("%zu/%zu artifacts byte-identical for workers 1 vs 8 (m=1e5)%s", same, n,
                                          diff.empty() ? "" : (", differ:" + diff).c_str())};
  });

  std::printf("acceptance: %d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
