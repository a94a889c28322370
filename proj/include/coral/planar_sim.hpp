#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coral/types.hpp"
#include "coral/world_model.hpp"

namespace coral {

enum class ContactKind : std::uint8_t { finger, ground, table_edge, wall };

const char* to_string(ContactKind kind);

/// One resolved contact after a step. Forces act on the object.
struct ContactForce {
  ContactKind kind = ContactKind::ground;
  int object = -1;      ///< index into SimState::objects
  Vec2 point{0, 0};     ///< world frame
  Vec2 normal{0, 1};    ///< unit direction of the normal force on the object
  double normal_force = 0.0;      ///< N, >= 0
  double tangential_force = 0.0;  ///< N, signed along (-normal.z, normal.x)
  double mu = 0.0;

  bool operator==(const ContactForce&) const = default;
};

struct BodyState {
  Pose2 pose;
  Vec2 velocity{0, 0};
  double omega = 0.0;
  bool attached = false;
  Vec2 attach_offset{0, 0};

  bool operator==(const BodyState&) const = default;
};

struct FingerState {
  Vec2 position{0, 0};
  Vec2 velocity{0, 0};
  Vec2 commanded_velocity{0, 0};

  bool operator==(const FingerState&) const = default;
};

/// Full simulator state. Object order follows the label order of the WorldBelief it was built from.
struct SimState {
  FingerState finger;
  std::vector<std::string> labels;
  std::vector<BodyState> objects;
  std::vector<ContactForce> contacts;
  double time = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t rng = 0;  ///< splitmix64 state for process/observation noise

  int index_of(const std::string& label) const;
  const BodyState& body(const std::string& label) const;

  /// Sum of finger contact normal forces acting on `object` (-1: all objects).
  double finger_force(int object = -1) const;
  /// Magnitude of the total finger contact force vector on `object` (-1: all objects).
  double finger_force_magnitude(int object = -1) const;

  bool operator==(const SimState&) const = default;
};

struct SimConfig {
  double dt = 0.01;
  double contact_stiffness = 5e3;  ///< N/m, object-environment contacts
  double contact_damping = 50.0;   ///< N*s/m
  /// Regularised Coulomb friction: |F_t| = min(viscosity*|v_t|, mu*F_n).
  double friction_viscosity = 1e3;
  double gravity = kGravity;

  double finger_radius = 0.01;
  double finger_lag = 0.02;          ///< s, first-order lag on commanded velocity
  double finger_stiffness = 400.0;   ///< N/m, end-effector impedance in series with the contact
  double finger_damping = 5.0;       ///< N*s/m
  double finger_friction = 0.1;
  double control_period = 0.1;       ///< s; a control is a displacement per control period
  double u_max = 0.05;               ///< m per control period, per channel

  double grasp_radius = 0.015;
  double grasp_speed_eps = 0.01;

  /// Per-step Gaussian noise on object positions (process noise), metres. 0 = off.
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

/// Creates the initial state from a belief/truth world with the finger at `finger_start`.
SimState make_state(const WorldBelief& world, const Vec2& finger_start, std::uint64_t seed = 0);

/// Advances one dt. Pure: the input state is not modified.
SimState step(const SimState& state, const Control& u, const WorldBelief& params,
              const SimConfig& cfg);

/// In-place variant used by rollouts; identical arithmetic to `step`.
void step_inplace(SimState& state, const Control& u, const WorldBelief& params,
                  const SimConfig& cfg);

/// Finger kinematics for one dt (clipped u is assumed). Contacts never push the finger back,
/// so this predicts the finger path exactly.
void advance_finger(FingerState& finger, const Control& u, const SimConfig& cfg,
                    const Fixtures* table = nullptr);

/// Deep copy; kept explicit because rollouts rely on it.
inline SimState fork(const SimState& state) { return state; }

/// Per-channel observation noise on poses (x, z, theta).
struct ObservationNoise {
  double position = 0.0;
  double rotation = 0.0;
};

/// Perturbs object poses with seeded Gaussian noise; velocities, finger and forces pass through.
/// Advances the RNG carried in `state`.
SimState observe(SimState& state, const ObservationNoise& noise);

// Geometry helpers shared by the cost engine and the task predicates.

/// World-frame overhang of the object's handle (or its outermost corner) past the table edge.
double overhang_of(const BodyState& body, const ObjectBelief& geometry, const Fixtures& fixtures);
/// World position of the object's handle point (object centre when it has none).
Vec2 handle_world(const BodyState& body, const ObjectBelief& geometry);
double speed_of(const BodyState& body);

/// Kinetic + gravitational + stored contact energy; used by energy-sanity tests.
double mechanical_energy(const SimState& state, const WorldBelief& params, const SimConfig& cfg);

bool is_finite(const SimState& state);

nlohmann::json to_json(const SimState& state);
SimState sim_state_from_json(const nlohmann::json& j);

}  // namespace coral
