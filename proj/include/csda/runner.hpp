#pragma once

#include <string>

#include "csda/run_config.hpp"

namespace csda {

// Process exit codes shared by the command front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitSolver = 2;
inline constexpr int kExitIo = 3;

struct RunContext {
  RunConfig config;
  std::string out_dir;
  std::uint64_t seed = 1234;
};

int cmd_validate(const RunContext& ctx);
int cmd_forward(const RunContext& ctx);
int cmd_adjoint(const RunContext& ctx);
int cmd_plan(const RunContext& ctx, const std::string& mode);  // external | internal | linear
int cmd_kappa_study(const RunContext& ctx);

/// Raw little-endian float64 export with a text sidecar (.meta).
void write_raw_f64(const std::string& path, std::span<const double> data,
                   const std::string& meta_text);

}  // namespace csda
