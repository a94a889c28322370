#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/planar_sim.hpp"
#include "coral/types.hpp"
#include "coral/world_model.hpp"

namespace coral {

enum class TermKind : std::uint8_t {
  distance_to_target,
  contact_indicator,
  control_effort,
  orientation_error,
  attractor,
  overhang_progress,
  lift_reward,
  force_band,
  lateral_drift,
  rotation_drift,
  step_penalty,
};

const char* to_string(TermKind kind);
std::optional<TermKind> term_kind_from_string(std::string_view name);

/// Finger normal force below which the finger counts as "not in contact", N.
inline constexpr double kContactForceFloor = 0.05;

/// One weighted term. Which parameters matter depends on `kind`:
///   distance_to_target  ||p(object) - target||^2 / scale^2   (finger when object is empty)
///   contact_indicator   1 if finger normal force on object < kContactForceFloor
///   control_effort      ||u||^2 / scale^2
///   orientation_error   |wrap(theta - reference)|
///   attractor           ||p_finger - x_des||^2 / scale^2, x_des = object.to_world(point)
///                       (point is a world point when object is empty)
///   overhang_progress   -clip01(overhang(object) / reference)
///   lift_reward         -max(0, z(object) - reference)
///   force_band          max(0, lo - F)^2 + max(0, F - hi)^2, F = finger force magnitude
///   lateral_drift       |component of p(object) - target perpendicular to axis| / scale
///   rotation_drift      |wrap(theta - reference)|
///   step_penalty        1
struct CostTerm {
  TermKind kind = TermKind::step_penalty;
  double weight = 1.0;
  std::string object;
  Vec2 target{0, 0};
  Vec2 point{0, 0};
  Vec2 axis{1, 0};
  double reference = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double scale = 1.0;

  bool operator==(const CostTerm&) const = default;
};

enum class Metric : std::uint8_t { overhang_of, speed_of, distance, orientation_of, contact };
enum class Comparator : std::uint8_t { lt, gt, le, ge };

/// One comparison. `a`/`b` name points: an object label, "<label>.handle", or "finger".
/// distance(a, b) uses `point` when b is empty; contact(a, b) is 1/0 with b one of
/// "finger", "ground", "table_edge", "wall".
struct Condition {
  Metric metric = Metric::speed_of;
  std::string a;
  std::string b;
  Vec2 point{0, 0};
  Comparator cmp = Comparator::lt;
  double threshold = 0.0;

  bool operator==(const Condition&) const = default;
};

/// Conjunction of conditions.
struct StagePredicate {
  std::vector<Condition> all;
  bool operator==(const StagePredicate&) const = default;
};

struct Stage {
  std::vector<CostTerm> terms;
  std::optional<StagePredicate> transition;
  bool operator==(const Stage&) const = default;
};

struct Blending {
  bool soft = false;
  std::vector<CostTerm> score_terms;
  double gain = 12.0;
  double offset = 0.55;
  bool operator==(const Blending&) const = default;
};

struct CostSpec {
  std::vector<Stage> stages;
  Blending blending;
  std::vector<CostTerm> terminal_terms;
  bool operator==(const CostSpec&) const = default;
};

/// Where an attempt (or a rollout) stands in the stage sequence.
struct StageStatus {
  std::size_t active_stage = 0;
  bool transition_fired = false;
  double blend_score = 0.0;
};

/// Label-resolved evaluator. Construction checks every label against the world and throws
/// StructuralError, so evaluation itself never fails on a missing object.
class CostEvaluator {
 public:
  CostEvaluator(CostSpec spec, const WorldBelief& world);

  const CostSpec& spec() const { return spec_; }

  double term_value(const CostTerm& term, const SimState& state, const Control& u) const;
  double stage_cost(std::size_t stage, const SimState& state, const Control& u) const;

  /// Active-stage cost; under soft blending mixes in the next stage with r = sigmoid(gain*(score-offset)).
  double running(const SimState& state, const Control& u, const StageStatus& stage) const;
  double terminal(const SimState& state) const;

  /// Weighted mean of the mapped score terms, in [0, 1].
  double blend_score(const SimState& state) const;
  double condition_value(const Condition& c, const SimState& state) const;
  bool holds(const StagePredicate& p, const SimState& state) const;

  /// Advances from `current` by at most one stage when its transition holds; never retreats.
  StageStatus status(const SimState& state, std::size_t current = 0) const;

 private:
  struct Resolved {
    int object = -1;
    const ObjectBelief* geometry = nullptr;
  };
  Resolved resolve(const std::string& label) const;
  Vec2 point_of(const std::string& name, const SimState& state) const;

  CostSpec spec_;
  WorldBelief world_;
};

double sigmoid(double x);

// Convenience wrappers over a temporary evaluator.
double evaluate_running(const CostSpec& spec, const WorldBelief& world, const SimState& state,
                        const Control& u, const StageStatus& stage);
double evaluate_terminal(const CostSpec& spec, const WorldBelief& world, const SimState& state);
StageStatus stage_status(const CostSpec& spec, const WorldBelief& world, const SimState& state,
                         std::size_t current = 0);

struct SpecLoad {
  CostSpec spec;
  std::vector<std::string> warnings;
};

/// Every structural/semantic rule violated by `spec`; labels are checked when `world` is given.
std::vector<std::string> validate(const CostSpec& spec, const WorldBelief* world = nullptr);
/// Weight-range and imbalance warnings (strategist output should stay within [0.1, 10]).
std::vector<std::string> weight_warnings(const CostSpec& spec);

/// Parses and validates. Throws ParseError (with byte offset) or ValidationError.
SpecLoad load_spec(std::string_view document, const WorldBelief* world = nullptr);
SpecLoad spec_from_json(const nlohmann::json& j, const WorldBelief* world = nullptr);
nlohmann::json to_json(const CostSpec& spec);
nlohmann::json to_json(const CostTerm& term);
std::string dump_spec(const CostSpec& spec);

/// FNV-1a over the canonical serialization, as 16 hex digits.
std::string spec_digest(const CostSpec& spec);

}  // namespace coral
