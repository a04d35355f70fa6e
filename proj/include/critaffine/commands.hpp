#ifndef CRITAFFINE_COMMANDS_HPP
#define CRITAFFINE_COMMANDS_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "crossval.hpp"
#include "error.hpp"
#include "invariant.hpp"
#include "model.hpp"
#include "nupc_io.hpp"
#include "potential.hpp"
#include "tail.hpp"
#include "walk.hpp"

namespace critaffine {

/// Per-invocation inputs that are not part of the config.
struct CommandArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  /// Cloud to read (tail, crossval); defaults to <output>/nu_cloud.nupc.
  std::string cloud_path;
  double duality_s = 0.5;
  int duality_depth = 20;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json estimate_json(const stats::Estimate& e) { return json{{"value", e.value}, {"stderr", e.stderr_}}; }

inline json estimate_ci_json(const stats::Estimate& e) {
  return json{{"value", e.value},
              {"stderr", e.stderr_},
              {"ci99", {e.value - 2.576 * e.stderr_, e.value + 2.576 * e.stderr_}}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

inline std::filesystem::path output_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create output directory " + dir.string());
  return dir;
}

inline Vec exp_all(const Vec& logs) {
  Vec z;
  for (double l : logs) z.push_back(std::exp(l));
  return z;
}

inline json validation_json(const ValidationReport& rep) {
  json checks = json::array();
  for (const auto& c : rep.checks) checks.push_back(json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json("inf"); };
  return json{{"ok", rep.ok},
              {"lattice_span", rep.lattice_span},
              {"sigma2", rep.sigma2},
              {"mean_log_a", rep.mean_log_a},
              {"delta", num(rep.delta)},
              {"epsilon", num(rep.epsilon)},
              {"symmetric_steps", rep.symmetric_steps},
              {"checks", checks}};
}

inline void write_model_json(const RunConfig& cfg, const ValidationReport& rep, const std::filesystem::path& dir) {
  json j{{"spec", spec_to_json(cfg.model)},
         {"spec_hash", spec_hash(spec_to_json(cfg.model).dump())},
         {"validation", validation_json(rep)},
         {"config", output_relevant(cfg.resolved)}};
  write_text(dir / "model.json", j.dump(2) + "\n");
}

inline PointCloudMeasure load_cloud(const RunConfig& cfg, const CommandArgs& args) {
  const std::string path =
      args.cloud_path.empty() ? (std::filesystem::path(cfg.output_dir) / "nu_cloud.nupc").string() : args.cloud_path;
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::Io, "cloud file " + path + " not found (run simulate first)");
  auto nu = read_cloud(path);
  if (nu.dim != cfg.model.dim) throw Error(ErrorKind::InvalidConfig, "cloud dimension differs from model.dim");
  const auto expect = spec_hash(spec_to_json(cfg.model).dump());
  if (!nu.meta.spec_hash.empty() && nu.meta.spec_hash != expect)
    throw Error(ErrorKind::InvalidConfig, "cloud " + path + " was simulated from a different model");
  return nu;
}

/// "r", "rshift:c", "file:path" (grid CSV).
inline PsiFunction parse_psi(const ALaw& law, const std::string& text) {
  if (text == "r") return psi_r(law);
  if (text.rfind("rshift:", 0) == 0) {
    try {
      return psi_rshift(law, std::stod(text.substr(7)));
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::InvalidConfig, "bad shift in psi '" + text + "'");
    }
  }
  if (text.rfind("file:", 0) == 0) return psi_from_grid(read_gridfn_csv(text.substr(5)));
  throw Error(ErrorKind::InvalidConfig, "psi must be r, rshift:c or file:path, got '" + text + "'");
}

inline std::string file_tag(std::string name) {
  for (char& c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
  return name;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

inline void cmd_validate(const RunConfig& cfg, std::ostream& log) {
  const auto rep = validate_spec(cfg.model);
  const auto dir = detail::output_dir(cfg);
  detail::write_model_json(cfg, rep, dir);
  log << "lattice_span=" << rep.lattice_span << "\n";
  log << "sigma2=" << rep.sigma2 << "\n";
  for (const auto& c : rep.checks) log << (c.passed ? "ok   " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
  if (!rep.ok) {
    std::string why;
    for (const auto& c : rep.checks)
      if (!c.passed) why += (why.empty() ? "" : "; ") + c.name + (c.detail.empty() ? "" : " (" + c.detail + ")");
    throw Error(rep.failure, why);
  }
}

inline void cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  const auto rep = require_valid(cfg.model);
  const auto dir = detail::output_dir(cfg);
  NuLOptions lo;
  lo.n_samples = cfg.run.nuL_samples;
  lo.tol = cfg.run.tol;
  lo.n_max = cfg.run.n_max;
  lo.seed = cfg.run.seed;
  lo.workers = cfg.run.workers;
  auto nuL = sample_nu_L(cfg.model, lo);
  NuOptions no;
  no.m_excursions = cfg.run.m_excursions;
  no.n_max = cfg.run.n_max;
  no.seed = cfg.run.seed;
  no.workers = cfg.run.workers;
  no.store_log_radius = cfg.run.store_log_radius;
  auto nu = estimate_nu(cfg.model, nuL, no);
  nu.meta.spec_hash = spec_hash(spec_to_json(cfg.model).dump());
  write_cloud(nu, (dir / "nu_cloud.nupc").string());
  detail::write_model_json(cfg, rep, dir);
  log << "points=" << nu.size() << " clusters=" << nu.n_clusters() << " truncated_fraction=" << nu.meta.truncated_fraction
      << "\n";
}

inline void cmd_tail(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
  require_valid(cfg.model);
  const auto nu = detail::load_cloud(cfg, args);
  const auto dir = detail::output_dir(cfg);
  const double p = lattice_span(cfg.model.a_law);
  TailOptions topt;
  topt.min_excursions = static_cast<std::size_t>(cfg.tail.min_excursions);
  const auto rep = estimate_cplus(nu, detail::exp_all(cfg.tail.z_log), p, topt);

  std::string annuli = "z,alpha,beta,mass,stderr,n_excursions,reliable\n";
  for (const auto& row : rep.annuli)
    annuli += detail::fmt_double(row.z) + "," + detail::fmt_double(row.alpha) + "," + detail::fmt_double(row.beta) + "," +
              detail::fmt_double(row.mass) + "," + detail::fmt_double(row.stderr_) + "," + std::to_string(row.n_excursions) +
              "," + (row.reliable ? "1" : "0") + "\n";
  detail::write_text(dir / "annuli.csv", annuli);

  const auto hist = angular_measure(nu, cfg.tail.angular_z_min, cfg.tail.bins,
                                    static_cast<std::size_t>(cfg.tail.min_excursions));
  std::string sigma = "bin";
  for (int k = 0; k < nu.dim; ++k) sigma += ",c" + std::to_string(k + 1);
  sigma += ",weight,stderr\n";
  for (std::size_t b = 0; b < hist.bins.size(); ++b) {
    sigma += std::to_string(b);
    for (double c : hist.bins[b].center) sigma += "," + detail::fmt_double(c);
    sigma += "," + detail::fmt_double(hist.bins[b].weight) + "," + detail::fmt_double(hist.bins[b].stderr_) + "\n";
  }
  detail::write_text(dir / "sigma.csv", sigma);

  BoundOptions bopt;
  bopt.require_g = cfg.tail.require_g;
  const auto bounds = bound_diagnostics(nu, cfg.model, detail::exp_all(cfg.tail.bound_z_log), bopt);
  std::vector<std::pair<std::string, double>> rows = {
      {"c_plus", rep.c_plus.value},   {"c_plus_stderr", rep.c_plus.stderr_},
      {"c_plus_ci99_lo", rep.ci99_lo}, {"c_plus_ci99_hi", rep.ci99_hi},
      {"chi2", rep.chi2},             {"chi2_dof", static_cast<double>(rep.dof)},
      {"chi2_p_value", rep.p_value},  {"lattice_span", rep.lattice_span},
      {"n_reliable", static_cast<double>(rep.n_reliable)},
  };
  if (p > 0) {
    for (double zl : cfg.tail.lattice_z_log) {
      const auto r = lattice_ratio(nu, std::exp(zl), p, 2);
      rows.emplace_back("lattice_ratio_2_at_log_z_" + detail::fmt_double(zl), r.value);
      rows.emplace_back("lattice_ratio_2_at_log_z_" + detail::fmt_double(zl) + "_stderr", r.stderr_);
    }
  }
  rows.emplace_back("g_applicable", bounds.g_status == "applicable" ? 1.0 : 0.0);
  for (const auto& kv : bounds.values) rows.push_back(kv);
  std::string text = "name,value\n";
  for (const auto& [k, v] : rows) text += k + "," + detail::fmt_double(v) + "\n";
  detail::write_text(dir / "bounds.csv", text);
  log << "c_plus=" << rep.c_plus.value << " +- " << rep.c_plus.stderr_ << " chi2_p=" << rep.p_value << "\n";
}

inline void cmd_potential(const RunConfig& cfg, std::ostream& log) {
  require_valid(cfg.model);
  const auto dir = detail::output_dir(cfg);
  const ALaw& law = cfg.model.a_law;
  const auto psi = detail::parse_psi(law, cfg.potential.psi);
  const auto cert = certify_F(law, psi);
  QuadParams q;
  q.tol = cfg.potential.tol;
  q.k_min = cfg.potential.k_min;
  q.k_max = cfg.potential.k_max;
  q.workers = cfg.run.workers;
  q.method = cfg.potential.method == "direct"       ? LambdaMethod::Direct
             : cfg.potential.method == "richardson" ? LambdaMethod::Richardson
                                                    : LambdaMethod::Auto;
  const auto res = potential_A(law, psi, cert, GridFn::symmetric(cfg.potential.xmax, cfg.potential.dx), q);

  // Poisson residual: exact grid lookups when the steps are whole grid multiples, else pointwise.
  double resid = 0.0;
  bool on_grid = has_finite_support(law);
  if (on_grid)
    for (double v : step_law(law).values) on_grid = on_grid && std::abs(v / res.A.dx - std::round(v / res.A.dx)) < 1e-9;
  double reach = 0.0;
  if (has_finite_support(law))
    for (double v : step_law(law).values) reach = std::max(reach, std::abs(v));
  if (on_grid) {
    Vec xs;
    for (std::size_t i = 0; i < res.A.size(); ++i)
      if (std::abs(res.A.x(i)) <= res.A.x_max() - reach + 1e-9) xs.push_back(res.A.x(i));
    for (double r : poisson_residual(law, [&](double x) { return res.A.at(x); }, psi, xs)) resid = std::max(resid, std::abs(r));
  } else if (std::holds_alternative<LogNormalA>(law) || has_finite_support(law)) {
    PotentialEvaluator ev(law, psi, cert, q);
    const Vec xs = {-3.0, -1.0, -0.25, 0.5, 2.0, 4.0};
    for (double r : poisson_residual(law, [&](double x) { return ev.evaluate(x).value; }, psi, xs))
      resid = std::max(resid, std::abs(r));
  } else {
    resid = std::numeric_limits<double>::quiet_NaN();
  }
  json header{{"psi", psi.name},
              {"J", res.J},
              {"K", res.K},
              {"sigma2", res.sigma2},
              {"method", res.method},
              {"reference_g", res.reference_g},
              {"theta_max", res.theta_max},
              {"truncation_bound", res.truncation_bound},
              {"quad_tol", q.tol},
              {"k_min", q.k_min},
              {"k_max", q.k_max},
              {"poisson_residual_max", std::isfinite(resid) ? json(resid) : json(nullptr)},
              {"A_at_xmin", res.A.values.front()},
              {"A_at_xmax", res.A.values.back()}};
  std::string tag = cfg.potential.psi;
  if (tag.rfind("file:", 0) == 0) tag = "file_" + std::filesystem::path(tag.substr(5)).stem().string();
  const auto path = dir / ("potential_" + detail::file_tag(tag) + ".csv");
  GridFn out = res.A;
  out.tags.clear();
  write_gridfn_csv(out, path.string(), header);
  log << "J=" << res.J << " K=" << res.K << " A(" << res.A.x(0) << ")=" << res.A.values.front() << " A(" << res.A.x_max()
      << ")=" << res.A.values.back() << " poisson_residual_max=" << resid << "\n";
}

inline CrossvalReport cmd_crossval(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
  require_valid(cfg.model);
  const auto nu = detail::load_cloud(cfg, args);
  const auto dir = detail::output_dir(cfg);
  CrossvalOptions o;
  o.gamma = cfg.potential.gamma;
  o.x_min = cfg.crossval.x_min;
  o.x_max = cfg.crossval.x_max;
  o.dx = cfg.crossval.dx;
  o.fit_lo = cfg.crossval.fit_lo;
  o.fit_hi = cfg.crossval.fit_hi;
  o.decay = cfg.crossval.decay == "power" ? DecayModel::Power : DecayModel::Exponential;
  o.z_grid = detail::exp_all(cfg.tail.z_log);
  o.rel_tol = cfg.crossval.rel_tol;
  o.plateau_rel_drift = cfg.crossval.plateau_rel_drift;
  o.hist.h = cfg.crossval.h;
  o.hist.n_batches = cfg.crossval.batches;
  o.hist.seed = cfg.run.seed;
  o.hist.workers = cfg.run.workers;
  o.tail.min_excursions = static_cast<std::size_t>(cfg.tail.min_excursions);
  const auto rep = cplus_crosscheck(cfg.model, nu, o);
  auto fit = [](const DecayFit& f) {
    return json{{"ok", f.ok}, {"log_c", f.log_c}, {"rate", f.rate}, {"sign", f.sign}, {"points", f.points}};
  };
  json j{{"gamma", rep.gamma},
         {"sigma2", rep.sigma2},
         {"J_psi", detail::estimate_json(rep.J_psi)},
         {"K_psi", detail::estimate_json(rep.K_psi)},
         {"K_window", rep.K_window},
         {"K_tail", rep.K_tail},
         {"decay_model", cfg.crossval.decay},
         {"decay_fit_left", fit(rep.fit_left)},
         {"decay_fit_right", fit(rep.fit_right)},
         {"T_potential", detail::estimate_ci_json(rep.T_potential)},
         {"T_plateau", detail::estimate_ci_json(rep.T_plateau)},
         {"plateau_drift", detail::estimate_json(rep.plateau_drift)},
         {"plateau_ok", rep.plateau_ok},
         {"denominator", rep.denominator},
         {"cplus_pot", detail::estimate_ci_json(rep.cplus_pot)},
         {"cplus_mc", detail::estimate_ci_json(rep.cplus_mc)},
         {"cplus_mc_chi2_p_value", rep.chi2_p_value},
         {"rel_diff_T", rep.rel_diff_T},
         {"rel_diff_cplus", rep.rel_diff_cplus},
         {"rel_tol", rep.rel_tol},
         {"positive_99", rep.positive99()},
         {"poisson_max_z", rep.poisson_max_z},
         {"identity_max_z", rep.identity_max_z},
         {"fubini", detail::estimate_json(rep.fubini)},
         {"f_left", detail::estimate_json(rep.f_left)},
         {"clamped_mass", rep.clamped_mass},
         {"test_function", "Phi_gamma"},
         {"heuristic", false}};
  detail::write_text(dir / "crossval.json", j.dump(2) + "\n");
  write_gridfn_csv(rep.f_phi.est, (dir / "f_phi.csv").string(), json{{"gamma", rep.gamma}});
  write_gridfn_csv(rep.psi_phi.est, (dir / "psi_phi.csv").string(), json{{"gamma", rep.gamma}});
  log << "T_plateau=" << rep.T_plateau.value << " T_potential=" << rep.T_potential.value << " cplus_pot=" << rep.cplus_pot.value
      << " cplus_mc=" << rep.cplus_mc.value << "\n";
  rep.check();
  return rep;
}

inline DualityResult cmd_duality(const RunConfig& cfg, const CommandArgs& args, std::ostream& log) {
  const auto res = duality_check(cfg.model, args.duality_s, args.duality_depth);
  const auto dir = detail::output_dir(cfg);
  std::string text = "s=" + detail::fmt_double(args.duality_s) + "\ndepth=" + std::to_string(args.duality_depth) +
                     "\nlhs=" + detail::fmt_double(res.lhs) + "\nrhs=" + detail::fmt_double(res.rhs) +
                     "\nabs_diff=" + detail::fmt_double(std::abs(res.lhs - res.rhs)) + "\nbound=" + detail::fmt_double(res.bound) +
                     "\n";
  detail::write_text(dir / "duality.txt", text);
  log << text;
  return res;
}

/// Resolves the config (file, then overrides) for one subcommand.
inline RunConfig resolve_config(const std::string& command, const CommandArgs& args) {
  json j = load_config_json(args.config_path);
  // Without a config, duality runs on the simple random walk.
  if (command == "duality" && args.config_path.empty()) j["model"]["a_law"] = a_law_from_shorthand("two_point:1");
  for (const auto& o : args.overrides) apply_override(j, o);
  return config_from_json(j);
}

/// Runs one subcommand; returns the process exit code.
inline int run_command(const std::string& command, const CommandArgs& args, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig cfg = resolve_config(command, args);
    if (command == "validate")
      cmd_validate(cfg, log);
    else if (command == "simulate")
      cmd_simulate(cfg, log);
    else if (command == "tail")
      cmd_tail(cfg, args, log);
    else if (command == "potential")
      cmd_potential(cfg, log);
    else if (command == "crossval")
      cmd_crossval(cfg, args, log);
    else if (command == "duality")
      cmd_duality(cfg, args, log);
    else
      throw Error(ErrorKind::InvalidConfig, "unknown subcommand " + command);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace critaffine

#endif  // CRITAFFINE_COMMANDS_HPP
