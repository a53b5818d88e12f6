// sch-lab <subcommand> --config <file> [--out <dir>] [--workers <n>] [--seed-override <u64>]

#include <CLI11.hpp>

#include "schlab/cli.hpp"

int main(int argc, char** argv)
{
  CLI::App app{"Pseudo-spectral Monte Carlo lab for the stochastic Camassa-Holm equation", "sch-lab"};
  app.set_version_flag("--version", schlab::kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  schlab::cli::Options o;
  std::string out;
  int workers = 0;
  std::uint64_t seed = 0;
  app.add_option("--config", o.config_path, "run-config JSON file")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out, "output directory (overrides output_dir)");
  auto* workers_opt =
      app.add_option("--workers", workers, "concurrent paths (fallback: SCH_LAB_WORKERS, then 1)")
          ->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed-override", seed, "replace noise.seed");

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"simulate", "single trajectory with diagnostics and blow-up monitor"},
      {"ensemble", "Monte Carlo ensemble statistics"},
      {"decay", "H^1 decay envelope check"},
      {"lyapunov", "Lyapunov condition check and H^s bound"},
      {"stability", "coupled-seed perturbation ladder"},
      {"measure", "backward-averaged empirical measures or OU calibration"},
      {"estimate-constants", "working constants across resolutions"},
      {"blowup-scan", "breaking-time detection across resolutions"},
  };
  for (const auto& [name, help] : subs) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : schlab::cli::kUsage;
  }
  o.subcommand = app.get_subcommands().front()->get_name();
  if (*out_opt) o.out_dir = out;
  if (*workers_opt) o.workers = workers;
  if (*seed_opt) o.seed_override = seed;
  return schlab::cli::dispatch(o);
}
