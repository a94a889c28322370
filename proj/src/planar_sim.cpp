#include "coral/planar_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <nlohmann/json.hpp>

#include "coral/rng.hpp"

namespace coral {

using nlohmann::json;

const char* to_string(ContactKind kind) {
  switch (kind) {
    case ContactKind::finger: return "finger";
    case ContactKind::ground: return "ground";
    case ContactKind::table_edge: return "table_edge";
    case ContactKind::wall: return "wall";
  }
  return "?";
}

int SimState::index_of(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

const BodyState& SimState::body(const std::string& label) const {
  int i = index_of(label);
  if (i < 0) throw StructuralError("state has no object '" + label + "'");
  return objects[static_cast<std::size_t>(i)];
}

double SimState::finger_force(int object) const {
  double f = 0.0;
  for (const auto& c : contacts) {
    if (c.kind == ContactKind::finger && (object < 0 || c.object == object)) f += c.normal_force;
  }
  return f;
}

double SimState::finger_force_magnitude(int object) const {
  Vec2 total = Vec2::Zero();
  for (const auto& c : contacts) {
    if (c.kind != ContactKind::finger || (object >= 0 && c.object != object)) continue;
    const Vec2 t{-c.normal.y(), c.normal.x()};
    total += c.normal_force * c.normal + c.tangential_force * t;
  }
  return total.norm();
}

SimState make_state(const WorldBelief& world, const Vec2& finger_start, std::uint64_t seed) {
  SimState s;
  s.finger.position = finger_start;
  for (const auto& [label, obj] : world.objects) {
    s.labels.push_back(label);
    BodyState b;
    b.pose = obj.pose;
    s.objects.push_back(b);
  }
  s.rng = seed;
  return s;
}

namespace {

struct Contact {
  ContactKind kind;
  Vec2 point;   // world
  Vec2 normal;  // direction of normal force on the body
  double depth;
  double mu;
  double stiffness;
  double damping;
  Vec2 other_velocity;
  // solver scratch
  Eigen::RowVector3d jn;
  Eigen::RowVector3d jt;
  enum class Mode : std::uint8_t { off, stick, slide } mode = Mode::stick;
  double slide_sign = 0.0;
  double fn = 0.0;
  double ft = 0.0;
};

constexpr std::size_t kMaxContacts = 16;
constexpr double kSupportDepth = 0.05;  // deeper "penetrations" are treated as no support

struct ContactSet {
  std::array<Contact, kMaxContacts> items;
  std::size_t size = 0;
  void push(const Contact& c) {
    if (size < kMaxContacts) items[size++] = c;
  }
};

// Fixture corner strictly inside the rectangle -> the shallowest box face that can touch it.
// Only faces whose outward normal points into the fixture (`into`) are eligible; otherwise
// a corner sliding past the edge would flip between side and bottom faces.
bool corner_in_box(const Pose2& pose, const Vec2& half, const Vec2& corner, const Vec2& into,
                   Vec2& push_dir, double& depth) {
  const Vec2 q = pose.to_local(corner);
  if (std::abs(q.x()) >= half.x() || std::abs(q.y()) >= half.y()) return false;
  const std::array<Vec2, 4> normals{Vec2{1, 0}, Vec2{-1, 0}, Vec2{0, 1}, Vec2{0, -1}};
  const std::array<double, 4> depths{half.x() - q.x(), half.x() + q.x(), half.y() - q.y(),
                                     half.y() + q.y()};
  bool found = false;
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 n_world = pose.rotate(normals[i]);
    if (n_world.dot(into) <= 0.0) continue;
    if (!found || depths[i] < depth) {
      depth = depths[i];
      push_dir = -n_world;
      found = true;
    }
  }
  return found;
}

void gather_contacts(const BodyState& b, const ObjectBelief& geo, const Fixtures& fx,
                     const FingerState& finger, const SimConfig& cfg, ContactSet& out) {
  const Vec2 h = geo.half_extents;
  const std::array<Vec2, 4> local_corners{Vec2{-h.x(), -h.y()}, Vec2{h.x(), -h.y()},
                                          Vec2{h.x(), h.y()}, Vec2{-h.x(), h.y()}};
  const Eigen::Matrix2d R = b.pose.rotation();
  const Vec2 c0 = b.pose.position();
  const double k = cfg.contact_stiffness;
  const double c = cfg.contact_damping;

  for (const Vec2& lc : local_corners) {
    const Vec2 p = c0 + R * lc;
    // table surface z = 0 for x <= edge
    if (p.x() <= fx.table_edge_x && p.y() < 0.0 && p.y() > -kSupportDepth) {
      out.push({ContactKind::ground, p, Vec2{0, 1}, -p.y(), geo.friction, k, c, Vec2::Zero(), {}, {}});
    }
    // wall occupies x >= wall_x, 0 - support <= z <= wall_height
    if (p.x() > fx.wall_x && p.y() < fx.wall_height && p.x() < fx.wall_x + kSupportDepth) {
      const double dx = p.x() - fx.wall_x;
      const double dz = fx.wall_height - p.y();
      if (dx <= dz) {
        out.push({ContactKind::wall, p, Vec2{-1, 0}, dx, geo.friction, k, c, Vec2::Zero(), {}, {}});
      } else {
        out.push({ContactKind::wall, p, Vec2{0, 1}, dz, geo.friction, k, c, Vec2::Zero(), {}, {}});
      }
    }
  }
  Vec2 dir;
  double depth = 0.0;
  if (corner_in_box(b.pose, h, Vec2{fx.table_edge_x, 0.0}, Vec2{-1, -1}, dir, depth)) {
    out.push({ContactKind::table_edge, Vec2{fx.table_edge_x, 0.0}, dir, depth, geo.friction, k, c,
              Vec2::Zero(), {}, {}});
  }
  if (corner_in_box(b.pose, h, Vec2{fx.wall_x, fx.wall_height}, Vec2{1, -1}, dir, depth)) {
    out.push({ContactKind::wall, Vec2{fx.wall_x, fx.wall_height}, dir, depth, geo.friction, k, c,
              Vec2::Zero(), {}, {}});
  }

  // finger disk vs rectangle
  const double r = cfg.finger_radius;
  const Vec2 q = b.pose.to_local(finger.position);
  const Vec2 clamped{std::clamp(q.x(), -h.x(), h.x()), std::clamp(q.y(), -h.y(), h.y())};
  const bool inside = std::abs(q.x()) < h.x() && std::abs(q.y()) < h.y();
  Vec2 n_local;
  Vec2 p_local;
  double pen = 0.0;
  if (!inside) {
    const Vec2 d = clamped - q;
    const double dist = d.norm();
    if (dist >= r || dist <= 0.0) return;
    n_local = d / dist;
    p_local = clamped;
    pen = r - dist;
  } else {
    const double d_right = h.x() - q.x(), d_left = h.x() + q.x();
    const double d_top = h.y() - q.y(), d_bottom = h.y() + q.y();
    double m = d_right;
    n_local = {-1, 0};
    p_local = {h.x(), q.y()};
    if (d_left < m) { m = d_left; n_local = {1, 0}; p_local = {-h.x(), q.y()}; }
    if (d_top < m) { m = d_top; n_local = {0, -1}; p_local = {q.x(), h.y()}; }
    if (d_bottom < m) { m = d_bottom; n_local = {0, 1}; p_local = {q.x(), -h.y()}; }
    pen = r + m;
  }
  const double ks = cfg.contact_stiffness * cfg.finger_stiffness /
                    (cfg.contact_stiffness + cfg.finger_stiffness);
  out.push({ContactKind::finger, c0 + R * p_local, R * n_local, pen, cfg.finger_friction, ks,
            cfg.finger_damping, finger.velocity, {}, {}});
}

void integrate_body(BodyState& b, int index, const ObjectBelief& geo, const Fixtures& fx,
                    const FingerState& finger, const SimConfig& cfg,
                    std::vector<ContactForce>& record) {
  ContactSet set;
  gather_contacts(b, geo, fx, finger, cfg, set);

  const double dt = cfg.dt;
  const double m = geo.mass;
  const double inertia = m * (geo.half_extents.squaredNorm()) / 3.0;
  const Eigen::Vector3d minv{1.0 / m, 1.0 / m, 1.0 / inertia};
  const Eigen::Vector3d q{b.velocity.x(), b.velocity.y(), b.omega};
  const Eigen::Vector3d gravity{0.0, -m * cfg.gravity, 0.0};
  const Vec2 com = b.pose.position();
  const double ct = cfg.friction_viscosity;

  for (std::size_t i = 0; i < set.size; ++i) {
    Contact& ct_i = set.items[i];
    const Vec2 r = ct_i.point - com;
    const Vec2 n = ct_i.normal;
    const Vec2 t{-n.y(), n.x()};
    ct_i.jn << n.x(), n.y(), r.x() * n.y() - r.y() * n.x();
    ct_i.jt << t.x(), t.y(), r.x() * t.y() - r.y() * t.x();
    ct_i.mode = Contact::Mode::stick;
  }

  Eigen::Vector3d qn = q;
  for (int iter = 0; iter < 8 && set.size > 0; ++iter) {
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    A.diagonal() = minv.cwiseInverse() / dt;
    Eigen::Vector3d rhs = (minv.cwiseInverse().array() * q.array()).matrix() / dt + gravity;
    for (std::size_t i = 0; i < set.size; ++i) {
      const Contact& k = set.items[i];
      if (k.mode == Contact::Mode::off) continue;
      const Vec2 t{-k.normal.y(), k.normal.x()};
      const double an = k.stiffness * dt + k.damping;
      const double bn = k.stiffness * k.depth + an * k.other_velocity.dot(k.normal);
      A += an * k.jn.transpose() * k.jn;
      rhs += bn * k.jn.transpose();
      if (k.mode == Contact::Mode::stick) {
        A += ct * k.jt.transpose() * k.jt;
        rhs += ct * k.other_velocity.dot(t) * k.jt.transpose();
      } else {
        const double s = k.slide_sign * k.mu;
        A -= s * an * k.jt.transpose() * k.jn;
        rhs -= s * bn * k.jt.transpose();
      }
    }
    qn = A.partialPivLu().solve(rhs);

    bool changed = false;
    for (std::size_t i = 0; i < set.size; ++i) {
      Contact& k = set.items[i];
      if (k.mode == Contact::Mode::off) continue;
      const Vec2 t{-k.normal.y(), k.normal.x()};
      const double an = k.stiffness * dt + k.damping;
      const double bn = k.stiffness * k.depth + an * k.other_velocity.dot(k.normal);
      const double fn = bn - an * k.jn.dot(qn);
      if (fn < 0.0) {
        k.mode = Contact::Mode::off;
        changed = true;
        continue;
      }
      const double vt = k.jt.dot(qn) - k.other_velocity.dot(t);
      if (k.mode == Contact::Mode::stick) {
        if (ct * std::abs(vt) > k.mu * fn * (1.0 + 1e-9) + 1e-12) {
          k.mode = Contact::Mode::slide;
          k.slide_sign = vt > 0.0 ? 1.0 : -1.0;
          changed = true;
        }
      } else if (vt * k.slide_sign < 0.0) {
        k.mode = Contact::Mode::stick;
        changed = true;
      }
    }
    if (!changed) break;
  }

  // Forces consistent with the final modes, clamped into the friction cone, then applied
  // explicitly so the reported forces are exactly the ones that moved the body.
  Eigen::Vector3d wrench = gravity;
  for (std::size_t i = 0; i < set.size; ++i) {
    Contact& k = set.items[i];
    if (k.mode == Contact::Mode::off) continue;
    const Vec2 t{-k.normal.y(), k.normal.x()};
    const double an = k.stiffness * dt + k.damping;
    const double bn = k.stiffness * k.depth + an * k.other_velocity.dot(k.normal);
    double fn = std::max(0.0, bn - an * k.jn.dot(qn));
    double ft = 0.0;
    if (k.mode == Contact::Mode::stick) {
      ft = -ct * (k.jt.dot(qn) - k.other_velocity.dot(t));
    } else {
      ft = -k.slide_sign * k.mu * fn;
    }
    const double cap = k.mu * fn;
    ft = std::clamp(ft, -cap, cap);
    k.fn = fn;
    k.ft = ft;
    wrench += fn * k.jn.transpose() + ft * k.jt.transpose();
    if (fn > 0.0) {
      record.push_back({k.kind, index, k.point, k.normal, fn, ft, k.mu});
    }
  }
  const Eigen::Vector3d v = q + dt * minv.cwiseProduct(wrench);

  b.velocity = {v.x(), v.y()};
  b.omega = v.z();
  b.pose.x += dt * v.x();
  b.pose.z += dt * v.y();
  b.pose.theta = wrap_angle(b.pose.theta + dt * v.z());
}

bool finite_body(const BodyState& b) {
  return std::isfinite(b.pose.x) && std::isfinite(b.pose.z) && std::isfinite(b.pose.theta) &&
         std::isfinite(b.velocity.x()) && std::isfinite(b.velocity.y()) && std::isfinite(b.omega);
}

void try_grasp(SimState& s, const WorldBelief& params, const SimConfig& cfg) {
  for (const auto& b : s.objects) {
    if (b.attached) return;
  }
  std::size_t i = 0;
  for (const auto& [label, geo] : params.objects) {
    BodyState& b = s.objects[i++];
    if (!geo.handle) continue;
    if ((handle_world(b, geo) - s.finger.position).norm() >= cfg.grasp_radius) continue;
    if (speed_of(b) >= cfg.grasp_speed_eps) continue;
    if (geo.grasp_min_overhang > 0.0 &&
        overhang_of(b, geo, params.fixtures) <= geo.grasp_min_overhang) {
      continue;
    }
    b.attached = true;
    b.attach_offset = b.pose.position() - s.finger.position;
    return;
  }
}

}  // namespace

void advance_finger(FingerState& f, const Control& u, const SimConfig& cfg, const Fixtures* table) {
  f.commanded_velocity = u / cfg.control_period;
  const double alpha = std::min(1.0, cfg.dt / std::max(cfg.finger_lag, 1e-9));
  f.velocity += alpha * (f.commanded_velocity - f.velocity);
  f.position += cfg.dt * f.velocity;
  if (!table) return;
  // the table is the quadrant x <= edge, z <= 0; keep the finger disk outside it
  const double r = cfg.finger_radius;
  const Vec2 q{std::min(f.position.x(), table->table_edge_x), std::min(f.position.y(), 0.0)};
  Vec2 d = f.position - q;
  const double dist = d.norm();
  if (dist >= r) return;
  const Vec2 n = dist > 1e-12 ? Vec2(d / dist) : Vec2(0.0, 1.0);
  f.position = dist > 1e-12 ? Vec2(q + r * n) : Vec2(f.position.x(), r);
  const double vn = f.velocity.dot(n);
  if (vn < 0.0) f.velocity -= vn * n;
}

void step_inplace(SimState& s, const Control& u_in, const WorldBelief& params,
                  const SimConfig& cfg) {
  Control u = u_in;
  for (int k = 0; k < 2; ++k) {
    if (!std::isfinite(u[k])) u[k] = 0.0;
    u[k] = std::clamp(u[k], -cfg.u_max, cfg.u_max);
  }
  const double dt = cfg.dt;

  FingerState& f = s.finger;
  advance_finger(f, u, cfg, &params.fixtures);

  s.contacts.clear();
  std::size_t i = 0;
  for (const auto& [label, geo] : params.objects) {
    if (i >= s.objects.size()) break;
    BodyState& b = s.objects[i];
    if (b.attached) {
      b.pose.x = f.position.x() + b.attach_offset.x();
      b.pose.z = f.position.y() + b.attach_offset.y();
      b.velocity = f.velocity;
      b.omega = 0.0;
    } else {
      const BodyState before = b;
      const std::size_t mark = s.contacts.size();
      integrate_body(b, static_cast<int>(i), geo, params.fixtures, f, cfg, s.contacts);
      if (!finite_body(b)) {
        b = before;
        b.velocity.setZero();
        b.omega = 0.0;
        s.contacts.resize(mark);
      }
    }
    ++i;
  }

  if (cfg.noise_std > 0.0) {
    Rng rng(s.rng);
    for (auto& b : s.objects) {
      if (b.attached) continue;
      b.pose.x += cfg.noise_std * rng.normal();
      b.pose.z += cfg.noise_std * rng.normal();
    }
    s.rng = rng.next_u64();
  }

  try_grasp(s, params, cfg);
  s.time += dt;
  s.steps += 1;
}

SimState step(const SimState& state, const Control& u, const WorldBelief& params,
              const SimConfig& cfg) {
  SimState next = state;
  step_inplace(next, u, params, cfg);
  return next;
}

SimState observe(SimState& state, const ObservationNoise& noise) {
  SimState out = state;
  if (noise.position <= 0.0 && noise.rotation <= 0.0) return out;
  Rng rng(state.rng);
  for (auto& b : out.objects) {
    if (noise.position > 0.0) {
      b.pose.x += noise.position * rng.normal();
      b.pose.z += noise.position * rng.normal();
    }
    if (noise.rotation > 0.0) b.pose.theta = wrap_angle(b.pose.theta + noise.rotation * rng.normal());
  }
  state.rng = rng.next_u64();
  out.rng = state.rng;
  return out;
}

Vec2 handle_world(const BodyState& body, const ObjectBelief& geo) {
  return geo.handle ? body.pose.to_world(*geo.handle) : body.pose.position();
}

double overhang_of(const BodyState& body, const ObjectBelief& geo, const Fixtures& fx) {
  if (geo.handle) return handle_world(body, geo).x() - fx.table_edge_x;
  double max_x = -1e300;
  const Vec2 h = geo.half_extents;
  for (double sx : {-1.0, 1.0}) {
    for (double sz : {-1.0, 1.0}) {
      max_x = std::max(max_x, body.pose.to_world(Vec2{sx * h.x(), sz * h.y()}).x());
    }
  }
  return max_x - fx.table_edge_x;
}

double speed_of(const BodyState& body) { return body.velocity.norm(); }

double mechanical_energy(const SimState& s, const WorldBelief& params, const SimConfig& cfg) {
  double e = 0.0;
  std::size_t i = 0;
  for (const auto& [label, geo] : params.objects) {
    const BodyState& b = s.objects[i++];
    const double inertia = geo.mass * geo.half_extents.squaredNorm() / 3.0;
    e += 0.5 * geo.mass * b.velocity.squaredNorm() + 0.5 * inertia * b.omega * b.omega;
    e += geo.mass * cfg.gravity * b.pose.z;
    ContactSet set;
    gather_contacts(b, geo, params.fixtures, s.finger, cfg, set);
    for (std::size_t k = 0; k < set.size; ++k) {
      e += 0.5 * set.items[k].stiffness * set.items[k].depth * set.items[k].depth;
    }
  }
  return e;
}

bool is_finite(const SimState& s) {
  if (!s.finger.position.allFinite() || !s.finger.velocity.allFinite()) return false;
  for (const auto& b : s.objects) {
    if (!finite_body(b)) return false;
  }
  for (const auto& c : s.contacts) {
    if (!std::isfinite(c.normal_force) || !std::isfinite(c.tangential_force)) return false;
  }
  return true;
}

json to_json(const SimState& s) {
  json j;
  j["t"] = s.time;
  j["steps"] = s.steps;
  j["finger"] = {{"p", {s.finger.position.x(), s.finger.position.y()}},
                 {"v", {s.finger.velocity.x(), s.finger.velocity.y()}},
                 {"vc", {s.finger.commanded_velocity.x(), s.finger.commanded_velocity.y()}}};
  json objs = json::array();
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const BodyState& b = s.objects[i];
    json o = {{"label", s.labels[i]},
              {"pose", {b.pose.x, b.pose.z, b.pose.theta}},
              {"v", {b.velocity.x(), b.velocity.y()}},
              {"w", b.omega}};
    if (b.attached) o["attached"] = {b.attach_offset.x(), b.attach_offset.y()};
    objs.push_back(std::move(o));
  }
  j["objects"] = std::move(objs);
  json cs = json::array();
  for (const auto& c : s.contacts) {
    cs.push_back({{"kind", to_string(c.kind)},
                  {"obj", c.object},
                  {"p", {c.point.x(), c.point.y()}},
                  {"n", {c.normal.x(), c.normal.y()}},
                  {"fn", c.normal_force},
                  {"ft", c.tangential_force},
                  {"mu", c.mu}});
  }
  j["contacts"] = std::move(cs);
  j["rng"] = s.rng;
  return j;
}

SimState sim_state_from_json(const json& j) {
  auto v2 = [](const json& a) { return Vec2{a.at(0).get<double>(), a.at(1).get<double>()}; };
  SimState s;
  try {
    s.time = j.at("t").get<double>();
    s.steps = j.at("steps").get<std::uint64_t>();
    s.finger.position = v2(j.at("finger").at("p"));
    s.finger.velocity = v2(j.at("finger").at("v"));
    s.finger.commanded_velocity = v2(j.at("finger").at("vc"));
    for (const auto& o : j.at("objects")) {
      s.labels.push_back(o.at("label").get<std::string>());
      BodyState b;
      const auto& p = o.at("pose");
      b.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
      b.velocity = v2(o.at("v"));
      b.omega = o.at("w").get<double>();
      if (o.contains("attached")) {
        b.attached = true;
        b.attach_offset = v2(o.at("attached"));
      }
      s.objects.push_back(b);
    }
    for (const auto& c : j.at("contacts")) {
      ContactForce f;
      const std::string kind = c.at("kind").get<std::string>();
      f.kind = kind == "finger"       ? ContactKind::finger
               : kind == "ground"     ? ContactKind::ground
               : kind == "table_edge" ? ContactKind::table_edge
                                      : ContactKind::wall;
      f.object = c.at("obj").get<int>();
      f.point = v2(c.at("p"));
      f.normal = v2(c.at("n"));
      f.normal_force = c.at("fn").get<double>();
      f.tangential_force = c.at("ft").get<double>();
      f.mu = c.at("mu").get<double>();
      s.contacts.push_back(f);
    }
    s.rng = j.value("rng", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ParseError(std::string("sim state: ") + e.what());
  }
  return s;
}

}  // namespace coral
