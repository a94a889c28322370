#include "coral/contact_strategy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

namespace coral {

using nlohmann::json;

Vec2 region_axes(const ContactRegion& region, const ObjectBelief& object) {
  return region.extent * object.half_extents;
}

namespace {

std::array<BoundarySegment, 4> rectangle_edges(const Vec2& h) {
  return {BoundarySegment{{-h.x(), -h.y()}, {h.x(), -h.y()}, {0, -1}},
          BoundarySegment{{h.x(), -h.y()}, {h.x(), h.y()}, {1, 0}},
          BoundarySegment{{h.x(), h.y()}, {-h.x(), h.y()}, {0, 1}},
          BoundarySegment{{-h.x(), h.y()}, {-h.x(), -h.y()}, {-1, 0}}};
}

}  // namespace

Manifold manifold(const ContactRegion& region, const ObjectBelief& object) {
  Manifold m;
  const Vec2 axes = region_axes(region, object);
  if (!(axes.array() > 0.0).all()) return m;
  const Vec2 inv2 = axes.cwiseInverse().cwiseAbs2();
  for (const BoundarySegment& e : rectangle_edges(object.half_extents)) {
    // (a + s d - c)^T D (a + s d - c) <= 1, s in [0, 1]
    const Vec2 d = e.b - e.a;
    const Vec2 f = e.a - region.center;
    const double A = d.cwiseProduct(d).dot(inv2);
    const double B = 2.0 * d.cwiseProduct(f).dot(inv2);
    const double C = f.cwiseProduct(f).dot(inv2) - 1.0;
    const double disc = B * B - 4.0 * A * C;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    const double s0 = std::max(0.0, (-B - sq) / (2.0 * A));
    const double s1 = std::min(1.0, (-B + sq) / (2.0 * A));
    if (s0 > s1) continue;
    BoundarySegment seg{e.a + s0 * d, e.a + s1 * d, e.outward};
    m.arc_length += seg.length();
    m.segments.push_back(seg);
  }
  return m;
}

std::vector<Candidate> sample_candidates(const Manifold& m, int k, Rng& rng) {
  if (m.empty()) throw ParameterDomainError("sample_candidates: empty manifold");
  if (k < 1) throw ParameterDomainError("sample_candidates: k must be >= 1");
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    if (m.arc_length <= 0.0) {
      out.push_back({m.segments.front().a, m.segments.front().outward});
      continue;
    }
    double s = rng.uniform() * m.arc_length;
    const BoundarySegment* seg = &m.segments.back();
    for (const auto& g : m.segments) {
      if (s < g.length()) {
        seg = &g;
        break;
      }
      s -= g.length();
    }
    const double len = seg->length();
    const double frac = len > 0.0 ? std::clamp(s / len, 0.0, 1.0) : 0.0;
    out.push_back({seg->a + frac * (seg->b - seg->a), seg->outward});
  }
  return out;
}

std::vector<Eigen::Vector3d> sample_disk(const DiskRegion& region, Rng& rng) {
  const double nn = region.normal.norm();
  if (!(nn > 0.0)) throw ParameterDomainError("sample_disk: normal must be non-zero");
  const Eigen::Vector3d n = region.normal / nn;
  // any vector not parallel to n seeds the tangent frame
  const Eigen::Vector3d seed = std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX()
                                                     : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d t1 = n.cross(seed).normalized();
  const Eigen::Vector3d t2 = n.cross(t1);
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<std::size_t>(std::max(0, region.num_samples)));
  for (int i = 0; i < region.num_samples; ++i) {
    const double rho = std::sqrt(rng.uniform()) * region.extent;
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    out.push_back(region.center + rho * (std::cos(phi) * t1 + std::sin(phi) * t2));
  }
  return out;
}

Candidate nearest_boundary_point(const ObjectBelief& object, const Vec2& p) {
  Candidate best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const BoundarySegment& e : rectangle_edges(object.half_extents)) {
    const Vec2 d = e.b - e.a;
    const double s = std::clamp((p - e.a).dot(d) / d.squaredNorm(), 0.0, 1.0);
    const Vec2 q = e.a + s * d;
    const double dist = (q - p).norm();
    if (dist < best_d) {
      best_d = dist;
      best = {q, e.outward};
    }
  }
  return best;
}

ContactStrategy build_strategy(const std::map<std::string, std::vector<ContactRegion>>& regions,
                               const WorldBelief& world, const Vec2& finger, double finger_radius,
                               Rng& rng, double attractor_weight, std::size_t stage) {
  ContactStrategy out;
  out.regions = regions;
  out.attractor_weight = attractor_weight;
  out.stage = stage;
  std::vector<std::string> owner;
  for (const auto& [label, list] : regions) {
    const ObjectBelief& obj = world.at(label);
    for (const ContactRegion& region : list) {
      ContactRegion r = region;
      Manifold m = manifold(r, obj);
      for (int widen = 0; m.empty() && widen < 3; ++widen) {
        r.extent *= 1.5;
        m = manifold(r, obj);
        out.events.push_back(label + ": empty contact manifold, extent widened to " +
                             std::to_string(r.extent));
      }
      std::vector<Candidate> c;
      if (m.empty()) {
        c.push_back(nearest_boundary_point(obj, region.center));
        out.events.push_back(label + ": manifold still empty, using nearest boundary point");
      } else {
        c = sample_candidates(m, std::max(1, region.num_samples), rng);
      }
      for (auto& cand : c) {
        out.candidates.push_back(cand);
        owner.push_back(label);
      }
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    const Pose2& pose = world.at(owner[i]).pose;
    const double d = (pose.to_world(out.candidates[i].point) - finger).norm();
    if (d < best) {
      best = d;
      out.chosen = static_cast<int>(i);
    }
  }
  if (out.chosen >= 0) {
    const Candidate& c = out.candidates[static_cast<std::size_t>(out.chosen)];
    out.object = owner[static_cast<std::size_t>(out.chosen)];
    out.x_des_local = c.point + finger_radius * c.outward;
  }
  return out;
}

CostSpec attach_attractor(const CostSpec& spec, const std::string& label, const Vec2& x_des_local,
                          double weight, std::size_t stage, double scale) {
  CostSpec out = spec;
  if (out.stages.empty()) return out;
  CostTerm t;
  t.kind = TermKind::attractor;
  t.weight = weight;
  t.object = label;
  t.point = x_des_local;
  t.scale = scale;
  out.stages[std::min(stage, out.stages.size() - 1)].terms.push_back(t);
  return out;
}

CostSpec attach_attractor(const CostSpec& spec, const ContactStrategy& s) {
  if (!s.active()) return spec;
  return attach_attractor(spec, s.object, s.x_des_local, s.attractor_weight, s.stage);
}

std::map<std::string, std::vector<ContactRegion>> regions_from_json(const json& j,
                                                                    const WorldBelief* world) {
  std::map<std::string, std::vector<ContactRegion>> out;
  std::vector<std::string> errs;
  if (!j.is_object()) throw ParseError("region document must be an object keyed by label");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& label = it.key();
      if (world && !world->contains(label)) {
        errs.push_back("regions: unknown object label '" + label + "'");
        continue;
      }
      const json& list = it.value().at("regions");
      for (std::size_t k = 0; k < list.size(); ++k) {
        const json& r = list[k];
        const std::string where = label + ".regions[" + std::to_string(k) + "]";
        auto planar = [&](const char* key) {
          const json& a = r.at(key);
          // 3-vectors are (x, y, z); the sim plane keeps x and z
          if (a.size() == 3) return Vec2{a[0].get<double>(), a[2].get<double>()};
          if (a.size() == 2) return Vec2{a[0].get<double>(), a[1].get<double>()};
          errs.push_back(where + ": '" + key + "' must have 2 or 3 entries");
          return Vec2{0, 0};
        };
        ContactRegion region;
        region.center = planar("center");
        region.normal = planar("normal");
        region.extent = r.at("extent").get<double>();
        region.num_samples = r.value("num_samples", 16);
        const double nn = region.normal.norm();
        if (!(nn > 0.0)) {
          errs.push_back(where + ": normal must be non-zero");
        } else {
          region.normal /= nn;
        }
        if (!(region.extent > 0.0) || !std::isfinite(region.extent)) {
          errs.push_back(where + ": extent must be > 0");
        }
        if (region.num_samples < 1) errs.push_back(where + ": num_samples must be >= 1");
        out[label].push_back(region);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("region document: ") + e.what());
  }
  if (!errs.empty()) throw ValidationError(std::move(errs));
  return out;
}

json regions_to_json(const std::map<std::string, std::vector<ContactRegion>>& regions) {
  json out = json::object();
  for (const auto& [label, list] : regions) {
    json arr = json::array();
    for (const auto& r : list) {
      arr.push_back({{"center", {r.center.x(), r.center.y()}},
                     {"normal", {r.normal.x(), r.normal.y()}},
                     {"extent", r.extent},
                     {"num_samples", r.num_samples}});
    }
    out[label] = {{"regions", std::move(arr)}};
  }
  return out;
}

}  // namespace coral
