#include <doctest.h>

#include <nlohmann/json.hpp>

#include "coral/world_model.hpp"

using namespace coral;

namespace {

WorldBelief board_world() {
  WorldBelief w;
  ObjectBelief b;
  b.label = "cutting_board";
  b.pose = {0.24, 0.01, 0.0};
  b.mass = 0.25;
  b.friction = 0.5;
  b.half_extents = {0.12, 0.01};
  w.objects.emplace(b.label, b);
  return w;
}

}  // namespace

TEST_CASE("init_belief scales mass and friction") {
  const WorldBelief truth = board_world();
  CHECK(init_belief(truth, {}) == truth);
  CHECK(init_belief(truth, {{"cutting_board", {1.0, 1.0}}}) == truth);

  const WorldBelief biased = init_belief(truth, {{"cutting_board", {8.0, 1.8}}});
  CHECK(biased.at("cutting_board").mass == doctest::Approx(2.0));
  CHECK(biased.at("cutting_board").friction == doctest::Approx(0.9));
  CHECK(biased.at("cutting_board").provenance == Provenance::prior());

  CHECK_THROWS_AS(init_belief(truth, {{"cutting_board", {0.0, 1.0}}}), ParameterDomainError);
  CHECK_THROWS_AS(init_belief(truth, {{"cutting_board", {1.0, -2.0}}}), ParameterDomainError);
}

TEST_CASE("apply_refinement replaces only the given fields") {
  const WorldBelief w = init_belief(board_world(), {{"cutting_board", {8.0, 1.8}}});
  const RefinementResult r = apply_refinement(w, {{"cutting_board", {0.9, std::nullopt}}}, 1);
  const ObjectBelief& o = r.belief.at("cutting_board");
  CHECK(o.mass == 0.9);
  CHECK(o.friction == doctest::Approx(0.9));
  CHECK(o.provenance == Provenance::refined(1));
  CHECK(r.warnings.empty());

  SUBCASE("unknown label is a no-op with a warning") {
    const RefinementResult u = apply_refinement(w, {{"spatula", {1.0, 1.0}}}, 1);
    CHECK(u.belief == w);
    REQUIRE(u.warnings.size() == 1);
    CHECK(u.warnings[0].find("spatula") != std::string::npos);
  }
  SUBCASE("out-of-clamp values are clamped with a warning") {
    const RefinementResult c = apply_refinement(w, {{"cutting_board", {500.0, -1.0}}}, 2);
    CHECK(c.belief.at("cutting_board").mass == kMassMax);
    CHECK(c.belief.at("cutting_board").friction == kFrictionMin);
    CHECK(c.warnings.size() == 2);
    CHECK(validate(c.belief.at("cutting_board")).empty());
  }
  SUBCASE("idempotent for identical updates") {
    const RefinementResult again = apply_refinement(r.belief, {{"cutting_board", {0.9, std::nullopt}}}, 1);
    CHECK(again.belief == r.belief);
  }
}

TEST_CASE("belief_divergence") {
  const WorldBelief truth = board_world();
  const WorldBelief biased = init_belief(truth, {{"cutting_board", {8.0, 1.8}}});
  const auto zero = belief_divergence(truth, truth);
  CHECK(zero.at("cutting_board").mass == 0.0);
  CHECK(zero.at("cutting_board").x == 0.0);
  const auto d = belief_divergence(biased, truth);
  CHECK(d.at("cutting_board").mass == doctest::Approx(1.75));
  CHECK(d.at("cutting_board").friction == doctest::Approx(0.4));

  WorldBelief other = truth;
  other.objects.begin()->second.label = "x";
  other.objects.emplace("extra", other.objects.begin()->second);
  CHECK_THROWS_AS(belief_divergence(other, truth), StructuralError);
}

TEST_CASE("validate object invariants") {
  ObjectBelief o = board_world().at("cutting_board");
  CHECK(validate(o).empty());
  o.mass = 0.0;
  o.friction = -0.1;
  o.half_extents = {0.1, 0.0};
  o.pose.theta = 4.0;
  CHECK(validate(o).size() == 4);
}

TEST_CASE("JSON keeps the per-object parameter field names") {
  WorldBelief w = board_world();
  w.objects.at("cutting_board").handle = Vec2{0.1, 0.01};
  const nlohmann::json j = objects_to_json(w);
  CHECK(j["cutting_board"]["mass_kg"] == 0.25);
  CHECK(j["cutting_board"]["friction_coeff"] == 0.5);
  CHECK(j["cutting_board"]["pose_estimated"].size() == 3);
  CHECK(world_from_json(to_json(w)) == w);

  // the example reply for parameter estimation parses as a belief
  const auto listing = nlohmann::json::parse(R"({"cutting_board": {
      "pose_estimated": [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
      "mass_kg": 0.4, "friction_coeff": 0.4}})");
  const WorldBelief parsed = world_from_json(listing);
  CHECK(parsed.at("cutting_board").mass == 0.4);
  CHECK(parsed.at("cutting_board").friction == 0.4);
  CHECK(parsed.at("cutting_board").pose.x == 0.5);
  CHECK(parsed.at("cutting_board").pose.theta == doctest::Approx(0.0));
}
