#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/contact_strategy.hpp"
#include "coral/cost_engine.hpp"
#include "coral/episode.hpp"
#include "coral/memory_unit.hpp"
#include "coral/mppi_planner.hpp"
#include "coral/planar_sim.hpp"
#include "coral/strategist.hpp"
#include "coral/tasks.hpp"
#include "coral/world_model.hpp"

namespace coral {

struct LoopConfig {
  int n_retry = 3;
  int max_refinements = 5;
  int attempt_step_budget = 2000;
  int replan_interval = 10;
  Vec2 K_f{0.3, 0.3};  ///< diagonal feedback gain on finger position error
  bool use_memory = true;
  bool use_refinement = true;
  bool use_contact_strategy = true;
  double memory_threshold = kMemoryThreshold;
  /// Identification residual of the current belief above which parameters are refined first.
  double residual_threshold = 0.2;
  ObservationNoise observation;

  void check() const;
};

/// nu = clip(u + K_f (x_des - x_measured), +-u_max).
Control reactive_augment(const Control& u, const Vec2& x_des, const Vec2& x_measured,
                         const Vec2& K_f, double u_max);

/// Everything an attempt needs; references must outlive the call.
struct AttemptSetup {
  const Scene* scene = nullptr;
  const WorldBelief* belief = nullptr;
  const CostSpec* spec = nullptr;  ///< attractor already attached
  MppiParams mppi;
  SimConfig sim;
  LoopConfig loop;
  int attempt = 0;
  std::uint64_t seed = 0;
};

struct AttemptResult {
  bool success = false;
  std::string reason;
  int steps = 0;
  double path_length = 0.0;
  std::size_t max_stage = 0;
};

/// Receives every step; used for traces and identification windows.
using StepSink = std::function<void(const EpisodeStep&)>;

AttemptResult run_attempt(const AttemptSetup& setup, const StepSink& sink);

struct RefinementEvent {
  int cycle = 0;
  int after_attempt = 0;
  std::string kind;  ///< "params" or "plan"
  std::string action;
  double residual = 0.0;
  std::string old_digest;
  std::string new_digest;
  WorldBelief old_theta;
  WorldBelief new_theta;
  std::string explanation;
  std::vector<std::string> warnings;
};

struct AttemptSummary {
  int attempt = 0;
  int cycle = 0;
  bool success = false;
  std::string reason;
  int steps = 0;
  double path_length = 0.0;
  std::size_t max_stage = 0;
};

struct ForceRow {
  int attempt = 0;
  int step = 0;
  double t = 0.0;
  double force = 0.0;
};

struct TaskReport {
  std::string task;
  std::uint64_t seed = 0;
  std::string strategist;
  bool success = false;
  std::string reason;
  int attempts = 0;
  int refinements = 0;
  long steps = 0;
  double path_length = 0.0;
  bool memory_hit = false;
  std::string memory_id;
  double memory_similarity = 0.0;
  WorldBelief truth;
  WorldBelief initial_belief;
  WorldBelief final_belief;
  std::string final_digest;
  std::vector<AttemptSummary> attempt_log;
  std::vector<RefinementEvent> refinement_log;
  std::vector<std::pair<int, WorldBelief>> belief_history;  ///< (cycle, belief)
  std::vector<ForceRow> force;
  std::vector<std::string> events;
};

nlohmann::json to_json(const TaskReport& report);

struct RunSetup {
  Scene scene;
  Strategist* strategist = nullptr;
  MemoryStore* memory = nullptr;
  LoopConfig loop;
  MppiParams mppi;
  SimConfig sim;
  std::uint64_t seed = 0;
  std::ostream* trace = nullptr;  ///< JSON-lines trace, optional
};

/// Outer loop: memory/formulate, attempts, refinement after N_retry failures, store on success.
/// Configuration errors throw before the first attempt; everything else lands in the report.
TaskReport run_task(const RunSetup& setup);

TaskBrief brief_of(const Scene& scene, const SimConfig& sim);

/// FNV-1a digest of a spec evaluated against a belief (what replay needs to recompute costs).
std::string plan_digest(const CostSpec& spec, const WorldBelief& belief);

}  // namespace coral
