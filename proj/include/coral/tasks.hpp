#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/planar_sim.hpp"
#include "coral/types.hpp"
#include "coral/world_model.hpp"

namespace coral {

/// Supported task ids, in a fixed order.
const std::vector<std::string>& supported_tasks();
bool is_supported_task(const std::string& id);

/// Everything needed to start an episode: ground truth, prior bias, and task parameters.
struct Scene {
  std::string task;
  std::string task_text;
  WorldBelief truth;
  Vec2 finger_start{0, 0};
  std::map<std::string, BiasFactors> bias;
  std::string target;  ///< the object the task is about

  // task parameters (only the relevant ones are used)
  Vec2 goal{0, 0};                 ///< pick tasks: carry target for the object centre
  double goal_tolerance = 0.02;    ///< m
  double flip_angle = -1.5707963267948966;
  double flip_tolerance = 0.15;    ///< rad
  double speed_eps = 0.01;         ///< m/s
  double force_lo = 4.0;           ///< N
  double force_hi = 6.0;
  double force_transient = 1.0;    ///< s
  double force_window = 5.0;       ///< s
  double force_fraction = 0.8;
  double fall_z = -0.05;           ///< object centre below the table top by this much = fault
};

/// Built-in scene for a task id. Throws ParameterDomainError listing supported ids.
Scene default_scene(const std::string& task);

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);
/// Throws std::runtime_error naming the path when it cannot be read.
Scene load_scene(const std::filesystem::path& path);

/// Ranges used to randomize a scene per trial.
struct Randomization {
  double pose_jitter = 0.0;  ///< +- m on object x
  std::optional<std::pair<double, double>> mass;
  std::optional<std::pair<double, double>> friction;
};

/// Applies seeded randomization to the target object (poses of all objects).
Scene randomize(const Scene& scene, const Randomization& r, std::uint64_t seed);

/// Per-step task progress tracking in the evaluation world.
class SuccessMonitor {
 public:
  explicit SuccessMonitor(const Scene& scene);

  struct Verdict {
    bool done = false;
    bool success = false;
    std::string reason;
  };

  /// Called after every evaluation-world step.
  Verdict update(const SimState& state);

  // force-regulation bookkeeping (push_const_force)
  int contacted_steps() const { return contacted_; }
  int in_band_steps() const { return in_band_; }

 private:
  Scene scene_;
  int target_ = -1;
  int window_ = 0;
  int contacted_ = 0;
  int in_band_ = 0;
};

}  // namespace coral
