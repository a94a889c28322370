#include <doctest.h>

#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "coral/planar_sim.hpp"

using namespace coral;

namespace {

WorldBelief one_box(double x, Vec2 half, double mass, double mu, double edge = 1.5) {
  WorldBelief w;
  ObjectBelief o;
  o.label = "box";
  o.pose = {x, half.y(), 0.0};
  o.half_extents = half;
  o.mass = mass;
  o.friction = mu;
  w.objects.emplace("box", o);
  w.fixtures.table_edge_x = edge;
  return w;
}

SimState settle(SimState s, const WorldBelief& w, const SimConfig& cfg, int n = 400) {
  for (int i = 0; i < n; ++i) step_inplace(s, Control::Zero(), w, cfg);
  return s;
}

// ground tangential force along x summed over the support contacts of object 0
double ground_tangential_x(const SimState& s) {
  double f = 0.0;
  for (const auto& c : s.contacts) {
    if (c.kind != ContactKind::ground) continue;
    const Vec2 t{-c.normal.y(), c.normal.x()};
    f += c.tangential_force * t.x();
  }
  return f;
}

}  // namespace

TEST_CASE("box at rest stays at rest") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.25, 0.5);
  SimState s = settle(make_state(w, {-0.3, 0.2}), w, cfg);
  // penalty contact: settles with sub-millimetre penetration
  CHECK(s.objects[0].pose.z > 0.05 - 1e-3);
  const Pose2 before = s.objects[0].pose;
  for (int i = 0; i < 100; ++i) step_inplace(s, Control::Zero(), w, cfg);
  CHECK(std::abs(s.objects[0].pose.x - before.x) < 1e-9);
  CHECK(std::abs(s.objects[0].pose.z - before.z) < 1e-9);
  CHECK(std::abs(s.objects[0].pose.theta - before.theta) < 1e-9);
}

TEST_CASE("steady push: ground friction equals mu m g") {
  const SimConfig cfg;
  const double m = 0.25, mu = 0.5;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, m, mu);
  SimState s = settle(make_state(w, {0.13, 0.03}), w, cfg);
  const Control u{0.01, 0.0};  // 0.1 m/s
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < 300; ++i) {
    step_inplace(s, u, w, cfg);
    if (i >= 150) {
      sum += ground_tangential_x(s);
      ++n;
    }
  }
  REQUIRE(s.objects[0].velocity.x() > 0.05);
  // opposes the motion with magnitude mu m g
  CHECK(-sum / n == doctest::Approx(mu * m * cfg.gravity).epsilon(0.05));
}

TEST_CASE("box past the table edge starts to tip") {
  const SimConfig cfg;
  // centre 2 cm beyond the edge: no support under the centre of mass
  const WorldBelief w = one_box(0.52, {0.05, 0.05}, 0.25, 0.5, 0.5);
  SimState s = make_state(w, {0.0, 0.3});
  bool rotating = false;
  for (int i = 0; i < 50 && !rotating; ++i) {
    step_inplace(s, Control::Zero(), w, cfg);
    rotating = std::abs(s.objects[0].omega) > 1e-6;
  }
  CHECK(rotating);
  CHECK(s.objects[0].omega < 0.0);  // clockwise, over the edge
}

TEST_CASE("step is pure and deterministic; forks are independent") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5);
  const SimState s0 = make_state(w, {0.13, 0.03});
  const SimState copy = s0;
  SimState a = fork(s0), b = fork(s0);
  for (int i = 0; i < 100; ++i) {
    step_inplace(a, {0.01, 0.0}, w, cfg);
    step_inplace(b, {0.01, 0.0}, w, cfg);
  }
  CHECK(s0 == copy);
  CHECK(a == b);
  SimState c = fork(a);
  step_inplace(c, {0.0, 0.01}, w, cfg);
  CHECK_FALSE(c == a);
  CHECK(step(s0, {0.01, 0.0}, w, cfg) == step(s0, {0.01, 0.0}, w, cfg));
  CHECK(s0 == copy);
}

TEST_CASE("parallel stepping of forks matches serial stepping") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5);
  const SimState s0 = make_state(w, {0.13, 0.03});
  constexpr int kForks = 256;
  auto run = [&](SimState& s, int i) {
    const Control u{0.01 * std::cos(i), 0.01 * std::sin(i)};
    for (int k = 0; k < 50; ++k) step_inplace(s, u, w, cfg);
  };
  std::vector<SimState> serial(kForks, s0), parallel(kForks, s0);
  for (int i = 0; i < kForks; ++i) run(serial[i], i);
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < kForks; i += 4) run(parallel[i], i);
    });
  }
  for (auto& th : pool) th.join();
  for (int i = 0; i < kForks; ++i) CHECK(serial[i] == parallel[i]);
}

TEST_CASE("observation noise") {
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5);
  SimState s = make_state(w, {0.1, 0.1}, 7);
  SUBCASE("zero noise is the identity") {
    SimState t = s;
    const SimState o = observe(t, {});
    CHECK(o.objects == s.objects);
  }
  SUBCASE("seeded and reproducible") {
    SimState t1 = s, t2 = s;
    CHECK(observe(t1, {0.005, 0.01}) == observe(t2, {0.005, 0.01}));
  }
  SUBCASE("empirical std matches") {
    double sum = 0.0, sq = 0.0;
    constexpr int n = 10000;
    for (int i = 0; i < n; ++i) {
      const double dx = observe(s, {0.005, 0.0}).objects[0].pose.x - 0.2;
      sum += dx;
      sq += dx * dx;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(sd == doctest::Approx(0.005).epsilon(0.05));
  }
}

TEST_CASE("energy never increases without input") {
  const SimConfig cfg;
  WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5);
  w.objects.at("box").pose = {0.2, 0.06, 0.3};  // dropped, tilted
  SimState s = make_state(w, {-0.3, 0.3});
  double e = mechanical_energy(s, w, cfg);
  for (int i = 0; i < 500; ++i) {
    step_inplace(s, Control::Zero(), w, cfg);
    const double e1 = mechanical_energy(s, w, cfg);
    CHECK(e1 <= e + 1e-9);
    e = e1;
  }
}

TEST_CASE("every contact respects the friction cone") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.04, 0.1}, 0.5, 0.8);
  SimState s = make_state(w, {0.14, 0.15});
  int contacts = 0;
  for (int i = 0; i < 600; ++i) {
    step_inplace(s, {0.01, (i % 50 < 25) ? 0.002 : -0.002}, w, cfg);
    for (const auto& c : s.contacts) {
      ++contacts;
      CHECK(c.normal_force >= 0.0);
      CHECK(std::abs(c.tangential_force) <= c.mu * c.normal_force + 1e-6);
    }
  }
  CHECK(contacts > 100);
}

TEST_CASE("mirrored scene gives the mirrored trajectory") {
  const SimConfig cfg;
  WorldBelief w = one_box(0.2, {0.04, 0.1}, 0.5, 0.8);
  WorldBelief m = one_box(-0.2, {0.04, 0.1}, 0.5, 0.8);
  SimState a = make_state(w, {0.14, 0.15});
  SimState b = make_state(m, {-0.14, 0.15});
  for (int i = 0; i < 300; ++i) {
    step_inplace(a, {0.01, 0.0}, w, cfg);
    step_inplace(b, {-0.01, 0.0}, m, cfg);
  }
  REQUIRE(std::abs(a.objects[0].pose.theta) > 0.05);  // something actually happened
  CHECK(b.objects[0].pose.x == doctest::Approx(-a.objects[0].pose.x).epsilon(1e-9));
  CHECK(b.objects[0].pose.z == doctest::Approx(a.objects[0].pose.z).epsilon(1e-9));
  CHECK(b.objects[0].pose.theta == doctest::Approx(-a.objects[0].pose.theta).epsilon(1e-9));
}

TEST_CASE("finger stays out of the table") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5, 0.5);
  SimState s = make_state(w, {0.0, 0.05});
  for (int i = 0; i < 200; ++i) step_inplace(s, {0.0, -0.05}, w, cfg);
  CHECK(s.finger.position.y() >= cfg.finger_radius - 1e-12);
}

TEST_CASE("degenerate inputs are clipped, never propagated") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5);
  SimState s = make_state(w, {0.1, 0.1});
  step_inplace(s, {1e9, -1e9}, w, cfg);
  CHECK(is_finite(s));
  step_inplace(s, {std::nan(""), 0.0}, w, cfg);
  CHECK(is_finite(s));
}

TEST_CASE("state JSON round trip is exact") {
  const SimConfig cfg;
  const WorldBelief w = one_box(0.2, {0.05, 0.05}, 0.5, 0.5);
  SimState s = make_state(w, {0.13, 0.03}, 3);
  for (int i = 0; i < 60; ++i) step_inplace(s, {0.01, 0.0}, w, cfg);
  REQUIRE_FALSE(s.contacts.empty());
  CHECK(sim_state_from_json(nlohmann::json::parse(to_json(s).dump())) == s);
}
