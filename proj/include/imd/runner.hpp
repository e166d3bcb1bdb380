#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "imd/manifold.hpp"
#include "imd/problems.hpp"

namespace imd {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exit codes of the experiment runner.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitPartial = 4;

ProblemDef problem_from_config(const json& cfg);

// Builds the ManifoldQuery part shared by point/sweep/trajectory runs.
ManifoldQuery query_from_config(const json& cfg, const ProblemDef& problem,
                                std::uint64_t seed);

// Dispatch one subcommand. Writes output files under out_dir and a
// human-readable message to `message` on failure. Returns an exit code.
int run_command(const std::string& command, const json& config,
                const std::string& out_dir, int workers, std::uint64_t seed,
                std::string& message);

// 17-significant-digit scientific formatting used by all CSV output.
std::string fmt_full(double v);

}  // namespace imd
