#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "coral/cost_engine.hpp"
#include "coral/rng.hpp"
#include "coral/types.hpp"
#include "coral/world_model.hpp"

namespace coral {

/// Proposed contact region in the object frame. The ellipse semi-axes are
/// extent * half_extents (uniform scaling of the principal axes).
struct ContactRegion {
  Vec2 center{0, 0};
  Vec2 normal{0, 1};
  double extent = 1.0;
  int num_samples = 16;

  bool operator==(const ContactRegion&) const = default;
};

Vec2 region_axes(const ContactRegion& region, const ObjectBelief& object);

/// One straight piece of the rectangle boundary (object frame).
struct BoundarySegment {
  Vec2 a{0, 0};
  Vec2 b{0, 0};
  Vec2 outward{0, 1};
  double length() const { return (b - a).norm(); }
};

struct Manifold {
  std::vector<BoundarySegment> segments;
  double arc_length = 0.0;
  bool empty() const { return segments.empty(); }
};

/// Rectangle boundary inside the region ellipse. Empty when they do not meet.
Manifold manifold(const ContactRegion& region, const ObjectBelief& object);

struct Candidate {
  Vec2 point{0, 0};    ///< object frame, on the boundary
  Vec2 outward{0, 1};  ///< object frame
};

/// k points uniform in arc length. Throws ParameterDomainError on an empty manifold.
std::vector<Candidate> sample_candidates(const Manifold& m, int k, Rng& rng);

/// 3D disk region (kept in the wire shape of the region documents).
struct DiskRegion {
  Eigen::Vector3d center{0, 0, 0};
  Eigen::Vector3d normal{0, 0, 1};
  double extent = 0.1;  ///< radius, m
  int num_samples = 16;
};

/// Uniform points on the disk: rho = sqrt(U) * r in a tangent frame of `normal`.
/// Throws ParameterDomainError on a zero normal.
std::vector<Eigen::Vector3d> sample_disk(const DiskRegion& region, Rng& rng);

struct ContactStrategy {
  std::map<std::string, std::vector<ContactRegion>> regions;
  std::string object;  ///< label of the chosen candidate's object
  std::vector<Candidate> candidates;
  int chosen = -1;
  /// Attractor point in the object frame: chosen candidate pushed out by the finger radius.
  Vec2 x_des_local{0, 0};
  double attractor_weight = 2.0;
  std::size_t stage = 0;  ///< stage that receives the attractor
  std::vector<std::string> events;  ///< fallbacks taken while building

  bool active() const { return chosen >= 0 && attractor_weight > 0.0; }
};

inline constexpr double kDefaultAttractorWeight = 2.0;

/// Samples candidates for every region (with the widen-then-nearest fallback), picks the
/// candidate nearest the finger and records x_des.
ContactStrategy build_strategy(const std::map<std::string, std::vector<ContactRegion>>& regions,
                               const WorldBelief& world, const Vec2& finger, double finger_radius,
                               Rng& rng, double attractor_weight = kDefaultAttractorWeight,
                               std::size_t stage = 0);

/// Closest boundary point of the rectangle to `p` (object frame).
Candidate nearest_boundary_point(const ObjectBelief& object, const Vec2& p);

/// Copy of `spec` with an attractor term toward x_des (object frame of `label`) in `stage`.
CostSpec attach_attractor(const CostSpec& spec, const std::string& label, const Vec2& x_des_local,
                          double weight, std::size_t stage = 0, double scale = 0.05);
CostSpec attach_attractor(const CostSpec& spec, const ContactStrategy& strategy);

// Region documents: {"<label>": {"regions": [{"center", "normal", "extent", "num_samples"}]}}.
std::map<std::string, std::vector<ContactRegion>> regions_from_json(const nlohmann::json& j,
                                                                    const WorldBelief* world);
nlohmann::json regions_to_json(const std::map<std::string, std::vector<ContactRegion>>& regions);

}  // namespace coral
