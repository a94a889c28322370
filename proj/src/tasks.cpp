#include "coral/tasks.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "coral/rng.hpp"

namespace coral {

using nlohmann::json;

const std::vector<std::string>& supported_tasks() {
  static const std::vector<std::string> ids{"push_const_force", "push_pick_board", "flip_box",
                                            "flip_wall",        "pick_box",        "pick_clutter_2d"};
  return ids;
}

bool is_supported_task(const std::string& id) {
  for (const auto& t : supported_tasks()) {
    if (t == id) return true;
  }
  return false;
}

namespace {

ObjectBelief box(const std::string& label, double x, Vec2 half, double mass, double mu) {
  ObjectBelief o;
  o.label = label;
  o.pose = {x, half.y(), 0.0};
  o.half_extents = half;
  o.mass = mass;
  o.friction = mu;
  return o;
}

void add(Scene& s, ObjectBelief o) { s.truth.objects.emplace(o.label, std::move(o)); }

std::string supported_list() {
  std::string out;
  for (const auto& t : supported_tasks()) out += (out.empty() ? "" : ", ") + t;
  return out;
}

}  // namespace

Scene default_scene(const std::string& task) {
  Scene s;
  s.task = task;
  s.truth.fixtures.table_edge_x = 1.5;
  if (task == "push_const_force") {
    s.task_text = "push the box across the table with a constant force of about 5 N";
    s.target = "box";
    add(s, box("box", 0.2, {0.05, 0.05}, 1.0, 0.5));
    s.finger_start = {0.12, 0.03};
  } else if (task == "push_pick_board") {
    s.task_text = "push the cutting board over the table edge until the handle overhangs, then pick it up";
    s.target = "cutting_board";
    ObjectBelief b = box("cutting_board", 0.24, {0.12, 0.01}, 0.25, 0.5);
    b.handle = Vec2{0.10, 0.01};
    b.grasp_min_overhang = 0.06;
    add(s, b);
    s.truth.fixtures.table_edge_x = 0.5;
    s.finger_start = {0.10, 0.012};
    s.bias["cutting_board"] = {8.0, 1.8};
  } else if (task == "flip_box") {
    s.task_text = "flip the tall box onto its side";
    s.target = "box";
    add(s, box("box", 0.2, {0.04, 0.1}, 0.5, 1.0));
    s.finger_start = {0.1, 0.1};
  } else if (task == "flip_wall") {
    s.task_text = "flip the box onto its side using the wall";
    s.target = "box";
    add(s, box("box", 0.2, {0.05, 0.05}, 0.5, 0.5));
    s.truth.fixtures.wall_x = 0.35;
    s.truth.fixtures.wall_height = 0.01;
    s.finger_start = {0.1, 0.01};
    s.flip_tolerance = 0.3;  // a box resting on its side against the curb lip counts
  } else if (task == "pick_box") {
    s.task_text = "pick up the box and carry it to the goal";
    s.target = "box";
    ObjectBelief b = box("box", 0.2, {0.03, 0.03}, 0.3, 0.5);
    b.handle = Vec2{0.0, 0.03};
    add(s, b);
    s.goal = {0.35, 0.15};
    s.finger_start = {0.1, 0.1};
  } else if (task == "pick_clutter_2d") {
    s.task_text = "pick up the target box from the clutter and carry it to the goal";
    s.target = "target";
    ObjectBelief t = box("target", 0.25, {0.03, 0.03}, 0.3, 0.5);
    t.handle = Vec2{0.0, 0.03};
    add(s, t);
    add(s, box("clutter_a", 0.15, {0.03, 0.04}, 0.4, 0.5));
    add(s, box("clutter_b", 0.35, {0.03, 0.05}, 0.4, 0.5));
    s.goal = {0.25, 0.2};
    s.finger_start = {0.05, 0.15};
  } else {
    throw ParameterDomainError("unknown task '" + task + "'; supported: " + supported_list());
  }
  return s;
}

json to_json(const Scene& s) {
  json bias = json::object();
  for (const auto& [label, f] : s.bias) bias[label] = {{"mass", f.mass}, {"friction", f.friction}};
  json j = to_json(s.truth);
  j["task"] = s.task;
  j["task_text"] = s.task_text;
  j["target"] = s.target;
  j["finger_start"] = {s.finger_start.x(), s.finger_start.y()};
  j["bias"] = std::move(bias);
  j["task_params"] = {{"goal", {s.goal.x(), s.goal.y()}},
                      {"goal_tolerance", s.goal_tolerance},
                      {"flip_angle", s.flip_angle},
                      {"flip_tolerance", s.flip_tolerance},
                      {"speed_eps", s.speed_eps},
                      {"force_band", {s.force_lo, s.force_hi}},
                      {"force_transient", s.force_transient},
                      {"force_window", s.force_window},
                      {"force_fraction", s.force_fraction},
                      {"fall_z", s.fall_z}};
  return j;
}

Scene scene_from_json(const json& j) {
  Scene s;
  try {
    s.task = j.at("task").get<std::string>();
    if (!is_supported_task(s.task)) {
      throw ParameterDomainError("unknown task '" + s.task + "'; supported: " + supported_list());
    }
    s.task_text = j.value("task_text", s.task);
    s.truth = world_from_json(j);
    s.target = j.at("target").get<std::string>();
    if (!s.truth.contains(s.target)) throw ValidationError({"target '" + s.target + "' is not an object"});
    s.finger_start = {j.at("finger_start").at(0).get<double>(), j.at("finger_start").at(1).get<double>()};
    if (j.contains("bias")) {
      for (auto it = j["bias"].begin(); it != j["bias"].end(); ++it) {
        s.bias[it.key()] = {it.value().value("mass", 1.0), it.value().value("friction", 1.0)};
      }
    }
    if (j.contains("task_params")) {
      const json& p = j["task_params"];
      if (p.contains("goal")) s.goal = {p["goal"][0].get<double>(), p["goal"][1].get<double>()};
      s.goal_tolerance = p.value("goal_tolerance", s.goal_tolerance);
      s.flip_angle = p.value("flip_angle", s.flip_angle);
      s.flip_tolerance = p.value("flip_tolerance", s.flip_tolerance);
      s.speed_eps = p.value("speed_eps", s.speed_eps);
      if (p.contains("force_band")) {
        s.force_lo = p["force_band"][0].get<double>();
        s.force_hi = p["force_band"][1].get<double>();
      }
      s.force_transient = p.value("force_transient", s.force_transient);
      s.force_window = p.value("force_window", s.force_window);
      s.force_fraction = p.value("force_fraction", s.force_fraction);
      s.fall_z = p.value("fall_z", s.fall_z);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("scene: ") + e.what());
  }
  return s;
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("scene " + path.string() + ": malformed JSON at byte " +
                     std::to_string(e.byte));
  }
  return scene_from_json(j);
}

Scene randomize(const Scene& scene, const Randomization& r, std::uint64_t seed) {
  Scene s = scene;
  Rng rng(derive_seed(seed, 0x5CE9E));
  for (auto& [label, o] : s.truth.objects) {
    if (r.pose_jitter > 0.0) o.pose.x += rng.uniform(-r.pose_jitter, r.pose_jitter);
  }
  ObjectBelief& t = s.truth.objects.at(s.target);
  if (r.mass) t.mass = rng.uniform(r.mass->first, r.mass->second);
  if (r.friction) t.friction = rng.uniform(r.friction->first, r.friction->second);
  return s;
}

SuccessMonitor::SuccessMonitor(const Scene& scene) : scene_(scene) {
  int i = 0;
  for (const auto& [label, o] : scene.truth.objects) {
    if (label == scene.target) target_ = i;
    ++i;
  }
}

SuccessMonitor::Verdict SuccessMonitor::update(const SimState& s) {
  Verdict v;
  if (!is_finite(s)) return {true, false, "sim fault: non-finite state"};
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (!s.objects[i].attached && s.objects[i].pose.z < scene_.fall_z) {
      return {true, false, "fault: " + s.labels[i] + " fell off the table"};
    }
  }
  const BodyState& b = s.objects[static_cast<std::size_t>(target_)];
  const std::string& task = scene_.task;
  if (task == "push_const_force") {
    if (s.time > scene_.force_transient + 1e-9) {
      ++window_;
      const double f = s.finger_force_magnitude(target_);
      if (s.finger_force(target_) >= 0.05) {
        ++contacted_;
        if (f >= scene_.force_lo && f <= scene_.force_hi) ++in_band_;
      }
    }
    if (s.time >= scene_.force_transient + scene_.force_window - 1e-9) {
      // too little contact means the band was not regulated at all
      const bool enough = 2 * contacted_ >= window_;
      const bool ok = enough && in_band_ >= scene_.force_fraction * contacted_;
      return {true, ok,
              ok ? "force in band" : "force in band on " + std::to_string(in_band_) + "/" +
                                         std::to_string(contacted_) + " contacted steps"};
    }
  } else if (task == "push_pick_board") {
    if (b.attached) return {true, true, "grasped"};
  } else if (task == "flip_box" || task == "flip_wall") {
    if (std::abs(wrap_angle(b.pose.theta - scene_.flip_angle)) < scene_.flip_tolerance &&
        speed_of(b) < scene_.speed_eps) {
      return {true, true, "flipped"};
    }
  } else {
    if (b.attached && (b.pose.position() - scene_.goal).norm() < scene_.goal_tolerance) {
      return {true, true, "delivered"};
    }
  }
  return v;
}

}  // namespace coral
