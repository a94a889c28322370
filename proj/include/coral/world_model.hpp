#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/types.hpp"

namespace coral {

/// Where a physical parameter value came from.
struct Provenance {
  enum class Kind { prior, refined };
  Kind kind = Kind::prior;
  int cycle = 0;  ///< refinement cycle index, meaningful for `refined`

  static Provenance prior() { return {}; }
  static Provenance refined(int cycle) { return {Kind::refined, cycle}; }
  bool operator==(const Provenance&) const = default;
};

/// Belief about one rigid rectangle in the scene.
struct ObjectBelief {
  std::string label;
  Pose2 pose;
  double mass = 1.0;      ///< kg
  double friction = 0.5;  ///< Coulomb coefficient
  Vec2 half_extents{0.05, 0.05};
  Provenance provenance;

  /// Grasp point in the object frame, if the object can be picked.
  std::optional<Vec2> handle;
  /// Minimum handle overhang past the table edge before a grasp may close (0 = none).
  double grasp_min_overhang = 0.0;

  bool operator==(const ObjectBelief&) const = default;
};

struct Fixtures {
  double table_edge_x = 0.5;
  double wall_x = 10.0;
  /// Height of the wall above the table surface; a low wall acts as a curb.
  double wall_height = 1.0;
  double gravity = kGravity;

  bool operator==(const Fixtures&) const = default;
};

/// The belief state: every parameter the planning world is built from.
struct WorldBelief {
  std::map<std::string, ObjectBelief> objects;
  Fixtures fixtures;

  const ObjectBelief& at(const std::string& label) const;
  bool contains(const std::string& label) const { return objects.count(label) != 0; }
  bool operator==(const WorldBelief&) const = default;
};

// Clamp box applied to every refined value.
inline constexpr double kMassMin = 0.01;
inline constexpr double kMassMax = 50.0;
inline constexpr double kFrictionMin = 0.01;
inline constexpr double kFrictionMax = 2.0;

/// Multiplicative prior bias for one object; models estimation error of the prior source.
struct BiasFactors {
  double mass = 1.0;
  double friction = 1.0;
};

/// Builds a prior belief by scaling mass/friction. Throws ParameterDomainError on factors <= 0.
WorldBelief init_belief(const WorldBelief& prior, const std::map<std::string, BiasFactors>& bias);

struct ParamUpdate {
  std::optional<double> mass;
  std::optional<double> friction;
};

struct RefinementResult {
  WorldBelief belief;
  std::vector<std::string> warnings;
};

/// Replaces the given fields, clamping out-of-range values and skipping unknown labels.
RefinementResult apply_refinement(const WorldBelief& belief,
                                  const std::map<std::string, ParamUpdate>& update, int cycle);

struct ObjectDivergence {
  double mass = 0.0;
  double friction = 0.0;
  double x = 0.0;
  double z = 0.0;
  double theta = 0.0;
};

/// Signed belief-minus-truth differences; throws StructuralError when label sets differ.
std::map<std::string, ObjectDivergence> belief_divergence(const WorldBelief& belief,
                                                          const WorldBelief& truth);

/// Checks ObjectBelief invariants; returns a list of violations (empty when valid).
std::vector<std::string> validate(const ObjectBelief& object);

// JSON in the per-object {"pose_estimated", "mass_kg", "friction_coeff"} shape,
// extended with "half_extents" and optional grasp fields.
nlohmann::json objects_to_json(const WorldBelief& belief);
nlohmann::json to_json(const WorldBelief& belief);
WorldBelief world_from_json(const nlohmann::json& j);

}  // namespace coral
