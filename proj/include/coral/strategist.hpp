#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/contact_strategy.hpp"
#include "coral/cost_engine.hpp"
#include "coral/episode.hpp"
#include "coral/world_model.hpp"

namespace coral {

using RegionMap = std::map<std::string, std::vector<ContactRegion>>;
using ParamMap = std::map<std::string, ParamUpdate>;

enum class Phase { formulate, refine_plan, refine_params };
const char* to_string(Phase phase);

/// Task description visible to a strategist; never carries ground-truth parameters.
struct TaskBrief {
  std::string id;
  std::string text;
  std::string target;
  Vec2 goal{0, 0};
  double flip_angle = -1.5707963267948966;
  double force_lo = 4.0;
  double force_hi = 6.0;
  double finger_radius = 0.01;
};

/// History length handed to prompt-based strategists.
inline constexpr std::size_t kHistorySteps = 5;

struct StrategistRequest {
  Phase phase = Phase::formulate;
  TaskBrief task;
  WorldBelief belief;
  /// Logged steps since the last refinement (identification data); prompts use the tail.
  std::vector<EpisodeStep> episode;
  std::optional<CostSpec> failing_spec;
  std::optional<RegionMap> regions;
  std::size_t stages_reached = 0;
  std::string failure_reason;
  /// Plan-refinement actions already taken in this run, oldest first.
  std::vector<std::string> previous_actions;
};

/// Last `n` steps of the episode, sampled at replan boundaries when possible.
std::vector<EpisodeStep> episode_tail(const std::vector<EpisodeStep>& episode,
                                      std::size_t n = kHistorySteps);

struct StrategistResponse {
  std::optional<CostSpec> spec;
  std::optional<RegionMap> regions;
  std::optional<ParamMap> params;
  std::string explanation;
  std::string action;               ///< short tag of what was changed
  std::vector<std::string> events;  ///< degradations, fallbacks, warnings
};

class Strategist {
 public:
  virtual ~Strategist() = default;
  virtual std::string name() const = 0;
  virtual StrategistResponse formulate(const StrategistRequest& req) = 0;
  virtual StrategistResponse refine_plan(const StrategistRequest& req) = 0;
  virtual StrategistResponse refine_params(const StrategistRequest& req) = 0;
};

// Identification: F_x = m a_x + (mu m) g sign(v_x) over logged pushing samples.

struct IdentificationSample {
  double force = 0.0;  ///< finger force along x on the object, N
  double accel = 0.0;  ///< m/s^2
  double sign = 0.0;   ///< sign of the sliding velocity
};

/// Extracts clean pushing samples for `label` (finger + support contacts only, sliding, flat).
std::vector<IdentificationSample> pushing_samples(const std::vector<EpisodeStep>& episode,
                                                  const std::string& label, double gravity);

inline constexpr std::size_t kMinIdentificationSamples = 10;

struct Identification {
  bool ok = false;
  double mass = 0.0;
  double friction = 0.0;
  std::size_t samples = 0;
  bool degenerate = false;  ///< no acceleration excitation: mass held, mu*m recovered
  double residual = 0.0;    ///< normalized RMS of the fitted model
  std::string diagnostic;
};

Identification identify_params(const std::vector<IdentificationSample>& samples,
                               const ObjectBelief& current, double gravity);

/// Normalized RMS residual of the believed (m, mu) on the samples; NaN without samples.
double identification_residual(const std::vector<IdentificationSample>& samples,
                               const ObjectBelief& belief, double gravity);

/// Deterministic templates plus least-squares identification.
class HeuristicStrategist : public Strategist {
 public:
  std::string name() const override { return "heuristic"; }
  StrategistResponse formulate(const StrategistRequest& req) override;
  StrategistResponse refine_plan(const StrategistRequest& req) override;
  StrategistResponse refine_params(const StrategistRequest& req) override;
};

/// Per-task template cost spec and regions (exposed for tests and prompts).
CostSpec task_spec(const TaskBrief& task, const WorldBelief& belief);
RegionMap task_regions(const TaskBrief& task, const WorldBelief& belief);

/// Relaxes every threshold of `stage`'s transition by 20% (">" x0.8, "<" x1.2).
CostSpec relax_transition(const CostSpec& spec, std::size_t stage);

}  // namespace coral
