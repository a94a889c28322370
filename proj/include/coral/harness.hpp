#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/control_loop.hpp"

namespace coral {

/// Applies {"mppi": {...}, "sim": {...}, "loop": {...}} overrides. Unknown sections or keys and
/// mistyped values throw ParseError naming the key.
void apply_config(const nlohmann::json& j, MppiParams& mppi, SimConfig& sim, LoopConfig& loop);

struct RunConfig {
  std::optional<std::filesystem::path> scene_path;  ///< built-in scene for `task` when empty
  std::string task;
  std::uint64_t seed = 0;
  std::string strategist = "heuristic";  ///< heuristic | remote
  MppiParams mppi;
  SimConfig sim;
  LoopConfig loop;
  std::optional<std::filesystem::path> memory_path;
  std::filesystem::path log_dir;  ///< nothing is written when empty
};

/// Scene from the file when given (its task must match `task` if both are set), else built-in.
Scene resolve_scene(const RunConfig& cfg);

/// "heuristic" or "remote" (configured from the environment).
std::unique_ptr<Strategist> make_strategist(const std::string& kind);

struct RunResult {
  TaskReport report;
  std::vector<std::string> files;  ///< written artifacts
};

/// Runs one task and writes trace.jsonl, report.json, force.csv and params.csv into log_dir.
RunResult execute_run(const RunConfig& cfg);

void write_force_csv(std::ostream& out, const TaskReport& report, const Scene& scene);
void write_params_csv(std::ostream& out, const TaskReport& report);

// Benchmarks ----------------------------------------------------------------------------------

inline const std::vector<std::string> kBenchVariants{"full", "no_memory", "no_refinement",
                                                     "no_contact_strategy"};

struct BenchTask {
  std::string task;
  int seeds = 10;
  std::uint64_t first_seed = 1;
  Randomization randomization;
  std::vector<std::string> variants{"full"};
  std::optional<std::filesystem::path> scene_path;
};

/// Mass [0.4, 0.8] kg and friction [0.3, 0.6] for the board task, nothing elsewhere.
Randomization default_randomization(const std::string& task);

/// {"tasks": [{"task", "seeds", "first_seed", "variants", "scene",
///             "randomize": {"pose_jitter", "mass": [lo, hi], "friction": [lo, hi]}}]}
std::vector<BenchTask> suite_from_json(const nlohmann::json& j);

struct BenchTrial {
  std::string task;
  std::string variant;
  std::uint64_t seed = 0;
  bool success = false;
  std::string reason;
  long steps = 0;
  double path_length = 0.0;
  int attempts = 0;
  int refinements = 0;
};

struct BenchRow {
  std::string task;
  std::string variant;
  int trials = 0;
  int successes = 0;
  double median_steps = 0.0;
  double median_path = 0.0;
};

struct BenchResult {
  std::vector<BenchTrial> trials;
  std::vector<BenchRow> rows;
};

/// Applies a variant's switches to a loop configuration; throws ParameterDomainError otherwise.
void apply_variant(const std::string& variant, LoopConfig& loop);

/// Every trial is independent: fresh in-process memory (seeded from `base.memory_path` when
/// given), seed-derived randomization. Trial failures never stop the suite.
BenchResult run_bench(const std::vector<BenchTask>& suite, const RunConfig& base,
                      const std::function<void(const BenchTrial&)>& progress = {});

double median(std::vector<double> v);
std::string format_table(const std::vector<BenchRow>& rows);

// Replay ----------------------------------------------------------------------------------------

struct ReplayReport {
  bool ok = true;
  long steps_checked = 0;
  long line = 0;  ///< 1-based line of the first divergence (0 when none)
  int attempt = -1;
  int step = -1;
  double logged = 0.0;
  double recomputed = 0.0;
  std::string message;
};

/// Recomputes every step cost from the logged state, control, stage and the spec/world logged
/// under the step's digest. Relative tolerance 1e-9.
ReplayReport replay_trace(std::istream& trace);

}  // namespace coral
