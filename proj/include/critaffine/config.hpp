#ifndef CRITAFFINE_CONFIG_HPP
#define CRITAFFINE_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "model.hpp"

namespace critaffine {

using json = nlohmann::ordered_json;

/// Everything a run depends on. Worker count and output directory do not
/// influence any output bit.
struct RunConfig {
  MuSpec model;
  struct Run {
    std::uint64_t seed = 1;
    int workers = 1;
    std::int64_t m_excursions = 1'000'000;
    std::int64_t n_max = 1'000'000;
    std::int64_t nuL_samples = 10'000;
    double tol = 1e-12;
    double store_log_radius = 20.0;
  } run;
  struct Tail {
    Vec z_log = {3, 4, 5, 6, 7};
    Vec bound_z_log = {2, 3, 4, 5, 6, 7, 8};
    Vec lattice_z_log = {3, 5};
    int bins = 64;
    double angular_z_min = 1.0;
    std::int64_t min_excursions = 100;
    bool require_g = false;
  } tail;
  struct Potential {
    std::string psi = "rshift:2";
    double xmax = 60.0;
    double dx = 0.05;
    double tol = 1e-6;
    std::string method = "auto";
    int k_min = 4;
    int k_max = 12;
    double gamma = 1.0;
  } potential;
  struct Crossval {
    double x_min = -10.0;
    double x_max = 10.0;
    double dx = 0.05;
    double fit_lo = 3.0;
    double fit_hi = 10.0;
    std::string decay = "exponential";
    double rel_tol = 0.2;
    double plateau_rel_drift = 0.02;
    int batches = 64;
    double h = 0.005;
  } crossval;
  std::string output_dir = "out";
  /// Resolved config as JSON.
  json resolved;
};

// ---------------------------------------------------------------------------
// Law <-> JSON.
// ---------------------------------------------------------------------------

inline json a_law_to_json(const ALaw& law) {
  return std::visit(detail::overloaded{
                        [](const LogNormalA& l) { return json{{"family", "lognormal"}, {"s", l.s}}; },
                        [](const TwoPointA& t) { return json{{"family", "two_point"}, {"p", t.p}}; },
                        [](const ShiftedExpMixA& e) {
                          return json{{"family", "shifted_exp_mix"}, {"rate", e.rate}, {"weight", e.weight}};
                        },
                        [](const DiscreteA& d) { return json{{"family", "discrete"}, {"values", d.values}, {"probs", d.probs}}; },
                        [](const ConstantA& c) { return json{{"family", "constant"}, {"a", c.a}}; },
                    },
                    law);
}

inline json b_law_to_json(const BLaw& law) {
  return std::visit(detail::overloaded{
                        [](const ConstantB& b) { return json{{"family", "constant"}, {"value", b.value}}; },
                        [](const UniformB& b) { return json{{"family", "uniform"}, {"lo", b.lo}, {"hi", b.hi}}; },
                        [](const LogNormalRadialB& b) { return json{{"family", "lognormal_radial"}, {"mu", b.mu}, {"s", b.s}}; },
                        [](const GaussianB& b) { return json{{"family", "gaussian"}, {"mean", b.mean}, {"cov", b.cov}}; },
                    },
                    law);
}

inline json spec_to_json(const MuSpec& s) {
  return json{{"dim", s.dim}, {"a_law", a_law_to_json(s.a_law)}, {"b_law", b_law_to_json(s.b_law)},
              {"recenter_offset", s.recenter_offset}};
}

namespace detail {

template <class T>
T need(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorKind::InvalidConfig, where + " needs '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::InvalidConfig, where + "." + key + " has the wrong type");
  }
}

inline void only_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw Error(ErrorKind::InvalidConfig, "unknown key " + where + "." + it.key());
  }
}

}  // namespace detail

inline ALaw a_law_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "model.a_law must be an object");
  const auto fam = detail::need<std::string>(j, "family", "model.a_law");
  const std::string w = "model.a_law";
  if (fam == "lognormal") {
    detail::only_keys(j, {"family", "s"}, w);
    return LogNormalA{detail::need<double>(j, "s", w)};
  }
  if (fam == "two_point") {
    detail::only_keys(j, {"family", "p"}, w);
    return TwoPointA{detail::need<double>(j, "p", w)};
  }
  if (fam == "shifted_exp_mix") {
    detail::only_keys(j, {"family", "rate", "weight"}, w);
    return ShiftedExpMixA{detail::need<double>(j, "rate", w), j.value("weight", 0.5)};
  }
  if (fam == "discrete") {
    detail::only_keys(j, {"family", "values", "probs"}, w);
    return DiscreteA{detail::need<Vec>(j, "values", w), detail::need<Vec>(j, "probs", w)};
  }
  if (fam == "constant") {
    detail::only_keys(j, {"family", "a"}, w);
    return ConstantA{detail::need<double>(j, "a", w)};
  }
  throw Error(ErrorKind::InvalidConfig, "unknown a_law family '" + fam + "'");
}

inline BLaw b_law_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "model.b_law must be an object");
  const auto fam = detail::need<std::string>(j, "family", "model.b_law");
  const std::string w = "model.b_law";
  if (fam == "constant") {
    detail::only_keys(j, {"family", "value"}, w);
    return ConstantB{detail::need<Vec>(j, "value", w)};
  }
  if (fam == "uniform") {
    detail::only_keys(j, {"family", "lo", "hi"}, w);
    return UniformB{detail::need<Vec>(j, "lo", w), detail::need<Vec>(j, "hi", w)};
  }
  if (fam == "lognormal_radial") {
    detail::only_keys(j, {"family", "mu", "s"}, w);
    return LogNormalRadialB{j.value("mu", 0.0), detail::need<double>(j, "s", w)};
  }
  if (fam == "gaussian") {
    detail::only_keys(j, {"family", "mean", "cov"}, w);
    return GaussianB{detail::need<Vec>(j, "mean", w), detail::need<Vec>(j, "cov", w)};
  }
  throw Error(ErrorKind::InvalidConfig, "unknown b_law family '" + fam + "'");
}

/// "lognormal:1", "two_point:0.5", "shifted_exp_mix:2,0.3", "constant:1".
inline json a_law_from_shorthand(const std::string& text) {
  const auto colon = text.find(':');
  const std::string fam = text.substr(0, colon);
  Vec args;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        args.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidConfig, "bad number in family '" + text + "'");
      }
    }
  }
  auto arg = [&](std::size_t i, double def) { return i < args.size() ? args[i] : def; };
  if (fam == "lognormal") return json{{"family", fam}, {"s", arg(0, 1.0)}};
  if (fam == "two_point") return json{{"family", fam}, {"p", arg(0, 1.0)}};
  if (fam == "shifted_exp_mix") return json{{"family", fam}, {"rate", arg(0, 1.0)}, {"weight", arg(1, 0.5)}};
  if (fam == "constant") return json{{"family", fam}, {"a", arg(0, 1.0)}};
  throw Error(ErrorKind::InvalidConfig, "unknown family shorthand '" + text + "'");
}

// ---------------------------------------------------------------------------
// Config files and overrides.
// ---------------------------------------------------------------------------

inline json default_config_json() {
  RunConfig c;
  c.model = MuSpec{1, LogNormalA{1.0}, ConstantB{{1.0}}, {}};
  return json{
      {"model", spec_to_json(c.model)},
      {"run",
       {{"seed", c.run.seed},
        {"workers", c.run.workers},
        {"m_excursions", c.run.m_excursions},
        {"n_max", c.run.n_max},
        {"nuL_samples", c.run.nuL_samples},
        {"tol", c.run.tol},
        {"store_log_radius", c.run.store_log_radius}}},
      {"tail",
       {{"z_log", c.tail.z_log},
        {"bound_z_log", c.tail.bound_z_log},
        {"lattice_z_log", c.tail.lattice_z_log},
        {"bins", c.tail.bins},
        {"angular_z_min", c.tail.angular_z_min},
        {"min_excursions", c.tail.min_excursions},
        {"require_g", c.tail.require_g}}},
      {"potential",
       {{"psi", c.potential.psi},
        {"xmax", c.potential.xmax},
        {"dx", c.potential.dx},
        {"tol", c.potential.tol},
        {"method", c.potential.method},
        {"k_min", c.potential.k_min},
        {"k_max", c.potential.k_max},
        {"gamma", c.potential.gamma}}},
      {"crossval",
       {{"x_min", c.crossval.x_min},
        {"x_max", c.crossval.x_max},
        {"dx", c.crossval.dx},
        {"fit_lo", c.crossval.fit_lo},
        {"fit_hi", c.crossval.fit_hi},
        {"decay", c.crossval.decay},
        {"rel_tol", c.crossval.rel_tol},
        {"plateau_rel_drift", c.crossval.plateau_rel_drift},
        {"batches", c.crossval.batches},
        {"h", c.crossval.h}}},
      {"output", {{"dir", c.output_dir}}},
  };
}

namespace detail {

/// Recursive merge; keys must exist in the base except inside laws, which are replaced whole.
inline void merge_into(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw Error(ErrorKind::InvalidConfig, "unknown config key " + path);
    json& slot = base[it.key()];
    if (path == "model.a_law" || path == "model.b_law" || !slot.is_object())
      slot = it.value();
    else
      merge_into(slot, it.value(), path);
  }
}

/// Scalar text to JSON: numbers, booleans and JSON literals parse, anything else is a string.
inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return json(text);
  }
}

}  // namespace detail

/// Applies "a.b.c=value" (leading dashes allowed).
inline void apply_override(json& cfg, std::string text) {
  while (!text.empty() && text.front() == '-') text.erase(text.begin());
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::InvalidConfig, "override '" + text + "' needs key=value");
  const std::string path = text.substr(0, eq);
  json value = detail::parse_scalar(text.substr(eq + 1));
  json* node = &cfg;
  std::stringstream ss(path);
  std::string key, done;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const bool in_law = done == "model.a_law" || done == "model.b_law";
    if (!node->is_object() || (!node->contains(keys[i]) && !in_law))
      throw Error(ErrorKind::InvalidConfig, "unknown config key " + path);
    done += (done.empty() ? "" : ".") + keys[i];
    node = &(*node)[keys[i]];
  }
  if (node->is_array() && !value.is_array()) value = json::array({value});
  *node = value;
}

inline json load_config_json(const std::string& path) {
  json cfg = default_config_json();
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
  json user;
  try {
    user = json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, "config " + path + " is not valid JSON: " + e.what());
  }
  detail::merge_into(cfg, user, "");
  return cfg;
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.resolved = j;
  try {
    const auto& m = j.at("model");
    c.model.dim = m.at("dim").get<int>();
    c.model.a_law = a_law_from_json(m.at("a_law"));
    c.model.b_law = b_law_from_json(m.at("b_law"));
    c.model.recenter_offset = m.at("recenter_offset").get<Vec>();
    const auto& r = j.at("run");
    c.run.seed = r.at("seed").get<std::uint64_t>();
    c.run.workers = r.at("workers").get<int>();
    c.run.m_excursions = r.at("m_excursions").get<std::int64_t>();
    c.run.n_max = r.at("n_max").get<std::int64_t>();
    c.run.nuL_samples = r.at("nuL_samples").get<std::int64_t>();
    c.run.tol = r.at("tol").get<double>();
    c.run.store_log_radius = r.at("store_log_radius").get<double>();
    const auto& t = j.at("tail");
    c.tail.z_log = t.at("z_log").get<Vec>();
    c.tail.bound_z_log = t.at("bound_z_log").get<Vec>();
    c.tail.lattice_z_log = t.at("lattice_z_log").get<Vec>();
    c.tail.bins = t.at("bins").get<int>();
    c.tail.angular_z_min = t.at("angular_z_min").get<double>();
    c.tail.min_excursions = t.at("min_excursions").get<std::int64_t>();
    c.tail.require_g = t.at("require_g").get<bool>();
    const auto& p = j.at("potential");
    c.potential.psi = p.at("psi").get<std::string>();
    c.potential.xmax = p.at("xmax").get<double>();
    c.potential.dx = p.at("dx").get<double>();
    c.potential.tol = p.at("tol").get<double>();
    c.potential.method = p.at("method").get<std::string>();
    c.potential.k_min = p.at("k_min").get<int>();
    c.potential.k_max = p.at("k_max").get<int>();
    c.potential.gamma = p.at("gamma").get<double>();
    const auto& x = j.at("crossval");
    c.crossval.x_min = x.at("x_min").get<double>();
    c.crossval.x_max = x.at("x_max").get<double>();
    c.crossval.dx = x.at("dx").get<double>();
    c.crossval.fit_lo = x.at("fit_lo").get<double>();
    c.crossval.fit_hi = x.at("fit_hi").get<double>();
    c.crossval.decay = x.at("decay").get<std::string>();
    c.crossval.rel_tol = x.at("rel_tol").get<double>();
    c.crossval.plateau_rel_drift = x.at("plateau_rel_drift").get<double>();
    c.crossval.batches = x.at("batches").get<int>();
    c.crossval.h = x.at("h").get<double>();
    c.output_dir = j.at("output").at("dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
  }
  if (c.run.workers < 1) throw Error(ErrorKind::InvalidConfig, "run.workers must be >= 1");
  if (c.run.m_excursions < 1 || c.run.n_max < 1 || c.run.nuL_samples < 1)
    throw Error(ErrorKind::InvalidConfig, "run sizes must be >= 1");
  if (!(c.run.tol > 0 && c.run.tol < 1)) throw Error(ErrorKind::InvalidConfig, "run.tol must lie in (0, 1)");
  if (c.crossval.decay != "exponential" && c.crossval.decay != "power")
    throw Error(ErrorKind::InvalidConfig, "crossval.decay must be 'exponential' or 'power'");
  if (c.potential.method != "auto" && c.potential.method != "richardson" && c.potential.method != "direct")
    throw Error(ErrorKind::InvalidConfig, "potential.method must be auto, richardson or direct");
  if (!(c.potential.dx > 0 && c.potential.xmax > 0 && c.crossval.dx > 0 && c.crossval.x_max > c.crossval.x_min))
    throw Error(ErrorKind::InvalidConfig, "grid bounds must be positive and ordered");
  return c;
}

/// The parts of the config that determine outputs (no workers, no output dir).
inline json output_relevant(const json& resolved) {
  json j = resolved;
  j["run"].erase("workers");
  j.erase("output");
  return j;
}

}  // namespace critaffine

#endif  // CRITAFFINE_CONFIG_HPP
