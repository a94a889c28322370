#include "coral/world_model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace coral {

using nlohmann::json;

const ObjectBelief& WorldBelief::at(const std::string& label) const {
  auto it = objects.find(label);
  if (it == objects.end()) throw StructuralError("unknown object label '" + label + "'");
  return it->second;
}

WorldBelief init_belief(const WorldBelief& prior, const std::map<std::string, BiasFactors>& bias) {
  for (const auto& [label, f] : bias) {
    if (!(f.mass > 0.0) || !(f.friction > 0.0)) {
      throw ParameterDomainError("bias factors for '" + label + "' must be > 0");
    }
  }
  WorldBelief out = prior;
  for (auto& [label, obj] : out.objects) {
    obj.provenance = Provenance::prior();
    if (auto it = bias.find(label); it != bias.end()) {
      obj.mass *= it->second.mass;
      obj.friction *= it->second.friction;
    }
  }
  return out;
}

RefinementResult apply_refinement(const WorldBelief& belief,
                                  const std::map<std::string, ParamUpdate>& update, int cycle) {
  RefinementResult result{belief, {}};
  for (const auto& [label, u] : update) {
    auto it = result.belief.objects.find(label);
    if (it == result.belief.objects.end()) {
      result.warnings.push_back("refinement for unknown label '" + label + "' ignored");
      continue;
    }
    ObjectBelief& obj = it->second;
    auto clamp_field = [&](double value, double lo, double hi, const char* name) {
      if (!std::isfinite(value)) {
        result.warnings.push_back(label + "." + name + " is not finite; kept previous value");
        return std::optional<double>{};
      }
      double c = std::clamp(value, lo, hi);
      if (c != value) {
        result.warnings.push_back(label + "." + name + " = " + std::to_string(value) +
                                  " clamped to " + std::to_string(c));
      }
      return std::optional<double>{c};
    };
    bool touched = false;
    if (u.mass) {
      if (auto v = clamp_field(*u.mass, kMassMin, kMassMax, "mass")) {
        obj.mass = *v;
        touched = true;
      }
    }
    if (u.friction) {
      if (auto v = clamp_field(*u.friction, kFrictionMin, kFrictionMax, "friction")) {
        obj.friction = *v;
        touched = true;
      }
    }
    if (touched) obj.provenance = Provenance::refined(cycle);
  }
  return result;
}

std::map<std::string, ObjectDivergence> belief_divergence(const WorldBelief& belief,
                                                          const WorldBelief& truth) {
  if (belief.objects.size() != truth.objects.size()) {
    throw StructuralError("belief and truth have different object sets");
  }
  std::map<std::string, ObjectDivergence> out;
  for (const auto& [label, b] : belief.objects) {
    auto it = truth.objects.find(label);
    if (it == truth.objects.end()) {
      throw StructuralError("label '" + label + "' missing from truth");
    }
    const ObjectBelief& t = it->second;
    out[label] = {b.mass - t.mass, b.friction - t.friction, b.pose.x - t.pose.x,
                  b.pose.z - t.pose.z, wrap_angle(b.pose.theta - t.pose.theta)};
  }
  return out;
}

std::vector<std::string> validate(const ObjectBelief& o) {
  std::vector<std::string> v;
  if (!(o.mass > 0.0)) v.push_back(o.label + ": mass must be > 0");
  if (!(o.friction >= 0.0)) v.push_back(o.label + ": friction must be >= 0");
  if (!(o.half_extents.x() > 0.0 && o.half_extents.y() > 0.0)) {
    v.push_back(o.label + ": half_extents must be positive");
  }
  if (!std::isfinite(o.pose.x) || !std::isfinite(o.pose.z) || !std::isfinite(o.pose.theta)) {
    v.push_back(o.label + ": pose must be finite");
  } else if (!(o.pose.theta > -std::numbers::pi && o.pose.theta <= std::numbers::pi)) {
    v.push_back(o.label + ": rotation must lie in (-pi, pi]");
  }
  return v;
}

namespace {

double pose_theta_from_quaternion(const json& p) {
  // [x, y, z, qx, qy, qz, qw]; rotation about -y maps +x towards +z.
  double qy = p.at(4).get<double>();
  double qw = p.at(6).get<double>();
  return wrap_angle(2.0 * std::atan2(-qy, qw));
}

}  // namespace

json objects_to_json(const WorldBelief& belief) {
  json out = json::object();
  for (const auto& [label, o] : belief.objects) {
    json e;
    e["pose_estimated"] = {o.pose.x, o.pose.z, o.pose.theta};
    e["mass_kg"] = o.mass;
    e["friction_coeff"] = o.friction;
    e["half_extents"] = {o.half_extents.x(), o.half_extents.y()};
    if (o.handle) e["handle"] = {o.handle->x(), o.handle->y()};
    if (o.grasp_min_overhang > 0.0) e["grasp_min_overhang"] = o.grasp_min_overhang;
    if (o.provenance.kind == Provenance::Kind::refined) e["refined_cycle"] = o.provenance.cycle;
    out[label] = std::move(e);
  }
  return out;
}

json to_json(const WorldBelief& belief) {
  json j;
  j["objects"] = objects_to_json(belief);
  j["fixtures"] = {{"table_edge_x", belief.fixtures.table_edge_x},
                   {"wall_x", belief.fixtures.wall_x},
                   {"wall_height", belief.fixtures.wall_height},
                   {"gravity", belief.fixtures.gravity}};
  return j;
}

WorldBelief world_from_json(const json& j) {
  WorldBelief w;
  const json& objs = j.contains("objects") ? j.at("objects") : j;
  if (!objs.is_object()) throw ParseError("world: 'objects' must be an object keyed by label");
  std::vector<std::string> violations;
  for (auto it = objs.begin(); it != objs.end(); ++it) {
    if (it.key() == "fixtures") continue;
    const json& e = it.value();
    ObjectBelief o;
    o.label = it.key();
    try {
      const json& p = e.at("pose_estimated");
      if (p.size() == 3) {
        o.pose = {p[0].get<double>(), p[1].get<double>(), wrap_angle(p[2].get<double>())};
      } else if (p.size() == 7) {
        o.pose = {p[0].get<double>(), p[2].get<double>(), pose_theta_from_quaternion(p)};
      } else {
        throw ParseError("pose_estimated must have 3 or 7 entries");
      }
      o.mass = e.at("mass_kg").get<double>();
      o.friction = e.at("friction_coeff").get<double>();
      if (e.contains("half_extents")) {
        o.half_extents = {e["half_extents"][0].get<double>(), e["half_extents"][1].get<double>()};
      }
      if (e.contains("handle")) o.handle = Vec2{e["handle"][0].get<double>(), e["handle"][1].get<double>()};
      o.grasp_min_overhang = e.value("grasp_min_overhang", 0.0);
      if (e.contains("refined_cycle")) o.provenance = Provenance::refined(e["refined_cycle"].get<int>());
    } catch (const json::exception& ex) {
      throw ParseError("object '" + o.label + "': " + ex.what());
    }
    auto v = validate(o);
    violations.insert(violations.end(), v.begin(), v.end());
    w.objects.emplace(o.label, std::move(o));
  }
  if (j.contains("fixtures")) {
    const json& f = j.at("fixtures");
    w.fixtures.table_edge_x = f.value("table_edge_x", w.fixtures.table_edge_x);
    w.fixtures.wall_x = f.value("wall_x", w.fixtures.wall_x);
    w.fixtures.wall_height = f.value("wall_height", w.fixtures.wall_height);
    w.fixtures.gravity = f.value("gravity", kGravity);
  }
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return w;
}

}  // namespace coral
