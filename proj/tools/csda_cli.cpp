#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include "csda/runner.hpp"

namespace {

// threads < 0 and seed == 0 mean "take the value from the config file".
csda::RunContext make_context(const std::string& config_path, const std::string& out_dir,
                              int threads, std::uint64_t seed) {
  const auto file = csda::ConfigFile::load(config_path);
  const std::string dir = std::filesystem::path(config_path).parent_path().string();
  csda::RunContext ctx;
  ctx.config = csda::RunConfig::parse(file, dir);
  if (threads >= 0) ctx.config.threads = threads;
  ctx.seed = seed != 0 ? seed : ctx.config.seed;
  ctx.out_dir = out_dir;
  csda::set_worker_threads(ctx.config.threads);
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic coupled photon/electron/positron transport solver and "
               "adjoint-based treatment-plan initializer"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", mode = "external";
  int threads = -1;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "path to the run configuration")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--threads", threads, "worker thread cap (default from config)");
    cmd->add_option("--seed", seed, "seed for randomized checks (default from config)");
  };

  CLI::App* validate = app.add_subcommand("validate", "run the hypothesis suite");
  CLI::App* forward = app.add_subcommand("forward", "solve the forward transport problem");
  CLI::App* adjoint = app.add_subcommand("adjoint", "solve the adjoint transport problem");
  CLI::App* plan = app.add_subcommand("plan", "compute the optimal-control initializer");
  plan->add_option("--mode", mode, "external | internal | linear")
      ->check(CLI::IsMember({"external", "internal", "linear"}));
  CLI::App* kappa = app.add_subcommand("kappa-study", "truncation consistency study");
  for (CLI::App* cmd : {validate, forward, adjoint, plan, kappa}) add_common(cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    const csda::RunContext ctx = make_context(config_path, out_dir, threads, seed);
    if (validate->parsed()) return csda::cmd_validate(ctx);
    if (forward->parsed()) return csda::cmd_forward(ctx);
    if (adjoint->parsed()) return csda::cmd_adjoint(ctx);
    if (plan->parsed()) return csda::cmd_plan(ctx, mode);
    if (kappa->parsed()) return csda::cmd_kappa_study(ctx);
  } catch (const csda::SolveFailure& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return csda::kExitSolver;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    const std::string what = e.what();
    const bool io = what.find("cannot open") != std::string::npos ||
                    what.rfind("io:", 0) == 0 ||
                    what.find("does not match") != std::string::npos;
    return io ? csda::kExitIo : csda::kExitValidation;
  }
  return csda::kExitValidation;
}
