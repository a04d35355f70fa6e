#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "critaffine/commands.hpp"

using namespace critaffine;

int main(int argc, char** argv) {
  CLI::App app{"Critical affine recursion: invariant measure, tail constant and recurrent potential"};
  app.require_subcommand(1);
  CommandArgs args;
  std::string out_dir;
  std::string workers;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", args.config_path, "JSON config file");
    sub->add_option("-o,--out", out_dir, "output directory (same as --output.dir)");
    sub->add_option("-j,--workers", workers, "worker threads (same as --run.workers)");
    sub->allow_extras();
    return sub;
  };
  common(app.add_subcommand("validate", "check the model and write model.json"));
  common(app.add_subcommand("simulate", "sample nu_L and the cloud nu_cloud.nupc"));
  auto* tail = common(app.add_subcommand("tail", "annuli.csv, sigma.csv and bounds.csv from a cloud"));
  tail->add_option("--cloud", args.cloud_path, "cloud file (default <out>/nu_cloud.nupc)");
  auto* pot = common(app.add_subcommand("potential", "recurrent potential A psi on a grid"));
  std::string psi, family, xmax, dx, tol;
  pot->add_option("--psi", psi, "r | rshift:c | file:path");
  pot->add_option("--family", family, "a_law shorthand, e.g. lognormal:1 or two_point:1");
  pot->add_option("--xmax", xmax, "grid half-width");
  pot->add_option("--dx", dx, "grid step");
  pot->add_option("--tol", tol, "quadrature tolerance");
  auto* cv = common(app.add_subcommand("crossval", "C+ from the potential route against the annuli"));
  cv->add_option("--cloud", args.cloud_path, "cloud file (default <out>/nu_cloud.nupc)");
  auto* dual = common(app.add_subcommand("duality", "ladder duality identity for a finite-support law"));
  dual->add_option("--s", args.duality_s, "generating-function argument in (0, 1)");
  dual->add_option("--depth", args.duality_depth, "enumeration depth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  for (const auto& extra : sub->remaining()) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
      std::cerr << "error: unexpected argument '" << extra << "' (overrides look like --section.key=value)\n";
      return 2;
    }
    args.overrides.push_back(extra);
  }
  if (!out_dir.empty()) args.overrides.push_back("output.dir=" + json(out_dir).dump());
  if (!workers.empty()) args.overrides.push_back("run.workers=" + workers);
  if (!psi.empty()) args.overrides.push_back("potential.psi=" + json(psi).dump());
  if (!xmax.empty()) args.overrides.push_back("potential.xmax=" + xmax);
  if (!dx.empty()) args.overrides.push_back("potential.dx=" + dx);
  if (!tol.empty()) args.overrides.push_back("potential.tol=" + tol);
  if (!family.empty()) {
    try {
      args.overrides.push_back("model.a_law=" + a_law_from_shorthand(family).dump());
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_code(e.kind());
    }
  }
  return run_command(sub->get_name(), args, std::cout, std::cerr);
}
