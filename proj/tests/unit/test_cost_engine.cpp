#include <doctest.h>

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "coral/cost_engine.hpp"
#include "coral/planar_sim.hpp"

using namespace coral;

namespace {

WorldBelief board_world() {
  WorldBelief w;
  ObjectBelief b;
  b.label = "board";
  b.pose = {0.3, 0.01, 0.0};
  b.half_extents = {0.12, 0.01};
  b.mass = 0.25;
  b.handle = Vec2{0.10, 0.01};
  w.objects.emplace("board", b);
  w.fixtures.table_edge_x = 0.5;
  return w;
}

CostTerm term(TermKind kind, double weight, std::string object = "") {
  CostTerm t;
  t.kind = kind;
  t.weight = weight;
  t.object = std::move(object);
  return t;
}

Condition cond(Metric m, std::string a, Comparator c, double threshold) {
  Condition k;
  k.metric = m;
  k.a = std::move(a);
  k.cmp = c;
  k.threshold = threshold;
  return k;
}

// two stages: reach the board centre, then lift it; soft switch as in the staged example
CostSpec staged_spec() {
  CostSpec s;
  Stage reach;
  CostTerm d = term(TermKind::distance_to_target, 2.0);
  d.target = {0.3, 0.05};
  d.scale = 0.1;
  reach.terms = {d, term(TermKind::step_penalty, 0.5)};
  reach.transition = StagePredicate{{cond(Metric::speed_of, "board", Comparator::lt, 0.01)}};
  Stage lift;
  CostTerm l = term(TermKind::lift_reward, 32.0, "board");
  l.reference = 0.01;
  lift.terms = {l};
  s.stages = {reach, lift};
  s.blending.soft = true;
  s.blending.gain = 12.0;
  s.blending.offset = 0.55;
  return s;
}

}  // namespace

TEST_CASE("distance term vanishes at the target") {
  const WorldBelief w = board_world();
  const SimState s = make_state(w, {0.0, 0.1});
  CostSpec spec;
  CostTerm d = term(TermKind::distance_to_target, 1.0, "board");
  d.target = {0.3, 0.01};
  spec.stages = {Stage{{d}, std::nullopt}};
  CHECK(evaluate_running(spec, w, s, Control::Zero(), {}) == 0.0);
}

TEST_CASE("soft switch blends adjacent stages") {
  const WorldBelief w = board_world();
  SimState s = make_state(w, {0.1, 0.05});
  s.objects[0].pose.z = 0.06;  // lifted 5 cm
  const CostSpec spec = staged_spec();
  const CostEvaluator eval(spec, w);
  const Control u = Control::Zero();
  const double c0 = eval.stage_cost(0, s, u);
  const double c1 = eval.stage_cost(1, s, u);
  // hand evaluation of both stages
  CHECK(c0 == doctest::Approx(2.0 * (0.2 * 0.2) / 0.01 + 0.5));
  CHECK(c1 == doctest::Approx(-32.0 * 0.05));

  StageStatus st;
  st.blend_score = 0.55;
  CHECK(eval.running(s, u, st) == doctest::Approx(0.5 * (c0 + c1)));

  st.blend_score = 1.0;
  const double r = 1.0 / (1.0 + std::exp(-12.0 * 0.45));
  CHECK(r == doctest::Approx(0.995503).epsilon(1e-6));
  CHECK(eval.running(s, u, st) == doctest::Approx((1.0 - r) * c0 + r * c1));

  SUBCASE("continuous in the blend score") {
    double prev = eval.running(s, u, {0, false, 0.0});
    for (int i = 1; i <= 1000; ++i) {
      const double cur = eval.running(s, u, {0, false, i / 1000.0});
      CHECK(std::abs(cur - prev) < 0.05);
      prev = cur;
    }
  }
}

TEST_CASE("terminal terms") {
  const WorldBelief w = board_world();
  SimState s = make_state(w, {0.1, 0.05});
  CostSpec spec;
  spec.stages = {Stage{{term(TermKind::step_penalty, 1.0)}, std::nullopt}};
  CHECK(evaluate_terminal(spec, w, s) == 0.0);

  CostTerm lift = term(TermKind::lift_reward, 32.0, "board");
  lift.reference = 0.01;
  spec.terminal_terms = {lift};
  s.objects[0].pose.z = 0.11;
  CHECK(evaluate_terminal(spec, w, s) == doctest::Approx(-3.2));

  CostTerm orient = term(TermKind::orientation_error, 28.0, "board");
  spec.terminal_terms = {orient};
  s.objects[0].pose.theta = std::numbers::pi / 2;
  CHECK(evaluate_terminal(spec, w, s) == doctest::Approx(28.0 * std::numbers::pi / 2));
}

TEST_CASE("contact indicator and force band") {
  const WorldBelief w = board_world();
  SimState s = make_state(w, {0.1, 0.05});
  CostTerm ind = term(TermKind::contact_indicator, 1.0, "board");
  CostTerm band = term(TermKind::force_band, 1.0, "board");
  band.lo = 4.0;
  band.hi = 6.0;
  const CostEvaluator eval(CostSpec{{Stage{{ind}, std::nullopt}}, {}, {}}, w);
  CHECK(eval.term_value(ind, s, Control::Zero()) == 1.0);
  ContactForce c;
  c.kind = ContactKind::finger;
  c.object = 0;
  c.normal = {1, 0};
  c.normal_force = 0.04;  // below the 0.05 N floor
  s.contacts = {c};
  CHECK(eval.term_value(ind, s, Control::Zero()) == 1.0);
  s.contacts[0].normal_force = 3.0;
  CHECK(eval.term_value(ind, s, Control::Zero()) == 0.0);
  CHECK(eval.term_value(band, s, Control::Zero()) == doctest::Approx(1.0));
  s.contacts[0].normal_force = 5.0;
  CHECK(eval.term_value(band, s, Control::Zero()) == 0.0);
  s.contacts[0].normal_force = 7.5;
  CHECK(eval.term_value(band, s, Control::Zero()) == doctest::Approx(2.25));
}

TEST_CASE("stage transitions fire on the full conjunction and latch") {
  const WorldBelief w = board_world();
  CostSpec spec;
  Stage push;
  push.terms = {term(TermKind::step_penalty, 1.0)};
  push.transition = StagePredicate{{cond(Metric::overhang_of, "board", Comparator::gt, 0.06),
                                    cond(Metric::speed_of, "board", Comparator::lt, 0.01)}};
  spec.stages = {push, Stage{{term(TermKind::step_penalty, 1.0)}, std::nullopt}};
  const CostEvaluator eval(spec, w);

  SimState s = make_state(w, {0.1, 0.05});
  s.objects[0].pose.x = 0.5 + 0.07 - 0.10;  // handle 7 cm past the edge
  s.objects[0].velocity = {0.005, 0.0};
  CHECK(overhang_of(s.objects[0], w.at("board"), w.fixtures) == doctest::Approx(0.07));
  const StageStatus fired = eval.status(s, 0);
  CHECK(fired.active_stage == 1);
  CHECK(fired.transition_fired);

  s.objects[0].velocity = {0.5, 0.0};
  CHECK(eval.status(s, 0).active_stage == 0);
  // once in stage 1 it never goes back
  s.objects[0].pose.x = 0.2;
  CHECK(eval.status(s, 1).active_stage == 1);
}

TEST_CASE("weights act linearly; ranking is invariant to uniform scaling") {
  const WorldBelief w = board_world();
  CostSpec a = staged_spec();
  a.blending.soft = false;
  CostSpec b = a;
  for (auto& st : b.stages)
    for (auto& t : st.terms) t.weight *= 2.0;
  SimState s = make_state(w, {0.1, 0.05});
  for (int i = 0; i < 20; ++i) {
    s.finger.position = {0.01 * i, 0.05};
    s.objects[0].pose.z = 0.01 + 0.002 * i;
    for (std::size_t stage : {0u, 1u}) {
      const double ca = evaluate_running(a, w, s, Control::Zero(), {stage, false, 0.0});
      const double cb = evaluate_running(b, w, s, Control::Zero(), {stage, false, 0.0});
      CHECK(cb == doctest::Approx(2.0 * ca));
    }
  }
}

TEST_CASE("load_spec round trip and diagnostics") {
  const WorldBelief w = board_world();
  const CostSpec spec = staged_spec();
  const SpecLoad back = load_spec(dump_spec(spec), &w);
  CHECK(back.spec == spec);
  CHECK(spec_digest(back.spec) == spec_digest(spec));

  SUBCASE("1000:1 weights load with an imbalance warning") {
    CostSpec s = spec;
    s.stages[0].terms[0].weight = 1000.0;
    s.stages[0].terms[1].weight = 1.0;
    const SpecLoad l = load_spec(dump_spec(s), &w);
    bool imbalance = false;
    for (const auto& m : l.warnings) imbalance |= m.find("imbalanced") != std::string::npos;
    CHECK(imbalance);
  }
  SUBCASE("unknown kind is named") {
    auto j = nlohmann::json::parse(dump_spec(spec));
    j["stages"][0]["terms"][0]["kind"] = "teleport";
    try {
      (void)spec_from_json(j, &w);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("teleport") != std::string::npos);
    }
  }
  SUBCASE("malformed text reports a location") {
    try {
      (void)load_spec("{\"stages\": [", &w);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
  }
  SUBCASE("unknown label is rejected at load, not during evaluation") {
    CostSpec s = spec;
    s.stages[1].terms[0].object = "spoon";
    CHECK_THROWS_AS(load_spec(dump_spec(s), &w), ValidationError);
    CHECK_THROWS_AS(CostEvaluator(s, w), StructuralError);
  }
  SUBCASE("structural rules") {
    CostSpec s = spec;
    s.stages[1].transition = s.stages[0].transition;
    CHECK_FALSE(validate(s, &w).empty());
    CostSpec empty;
    CHECK_FALSE(validate(empty).empty());
    CostSpec neg = spec;
    neg.stages[0].terms[0].weight = -1.0;
    CHECK_FALSE(validate(neg, &w).empty());
  }
}
