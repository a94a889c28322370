#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "coral/control_loop.hpp"

using namespace coral;

namespace {

RunSetup setup_for(const std::string& task, std::uint64_t seed, Strategist& s) {
  RunSetup r;
  r.scene = default_scene(task);
  r.strategist = &s;
  r.seed = seed;
  return r;
}

}  // namespace

TEST_CASE("reactive augmentation") {
  const Control u{0.02, -0.01};
  CHECK(reactive_augment(u, {0.3, 0.1}, {0.1, 0.0}, {0.0, 0.0}, 0.05) == u);
  const Control e = reactive_augment(Control::Zero(), {0.012, -0.02}, {0.0, 0.0}, {1.0, 1.0}, 0.05);
  CHECK(e.isApprox(Control{0.012, -0.02}));
  const Control nu = reactive_augment({0.03, 0.0}, {0.1, 0.0}, {0.0, 0.0}, {0.3, 0.3}, 0.05);
  CHECK(nu.x() == doctest::Approx(std::min(0.03 + 0.03, 0.05)));
  CHECK(nu.y() == 0.0);
  const Control small = reactive_augment({0.01, 0.0}, {0.1, 0.0}, {0.0, 0.0}, {0.3, 0.3}, 0.05);
  CHECK(small.x() == doctest::Approx(0.04));
}

TEST_CASE("zero step budget fails with reason budget") {
  HeuristicStrategist h;
  RunSetup r = setup_for("pick_box", 1, h);
  r.loop.attempt_step_budget = 0;
  r.loop.use_refinement = false;
  const TaskReport rep = run_task(r);
  CHECK_FALSE(rep.success);
  CHECK(rep.reason == "budget");
  CHECK(rep.steps == 0);
}

TEST_CASE("configuration errors surface before the first attempt") {
  HeuristicStrategist h;
  RunSetup r = setup_for("pick_box", 1, h);
  r.loop.n_retry = 0;
  CHECK_THROWS_AS(run_task(r), ParameterDomainError);
  r = setup_for("pick_box", 1, h);
  r.mppi.K = 0;
  CHECK_THROWS_AS(run_task(r), ParameterDomainError);
  r = setup_for("pick_box", 1, h);
  r.strategist = nullptr;
  CHECK_THROWS_AS(run_task(r), ParameterDomainError);
}

TEST_CASE("pick_box succeeds on the first attempt and is remembered") {
  HeuristicStrategist h;
  MemoryStore memory;
  RunSetup r = setup_for("pick_box", 42, h);
  r.memory = &memory;
  const TaskReport rep = run_task(r);
  CHECK(rep.success);
  CHECK(rep.attempts == 1);
  CHECK(rep.refinements == 0);
  CHECK(memory.entries().size() == 1);
  CHECK(memory.entries()[0].steps == rep.steps);

  SUBCASE("the second run starts from the stored entry") {
    const TaskReport again = run_task(r);
    CHECK(again.memory_hit);
    CHECK(again.memory_id == memory.entries()[0].id);
    CHECK(again.success);
  }
}

TEST_CASE("runs are byte-deterministic") {
  HeuristicStrategist h;
  std::ostringstream a, b;
  RunSetup r = setup_for("pick_box", 7, h);
  r.trace = &a;
  const TaskReport ra = run_task(r);
  r.trace = &b;
  const TaskReport rb = run_task(r);
  CHECK(a.str() == b.str());
  CHECK(to_json(ra).dump() == to_json(rb).dump());
  CHECK_FALSE(a.str().empty());
}

TEST_CASE("biased board without refinement fails") {
  HeuristicStrategist h;
  RunSetup r = setup_for("push_pick_board", 42, h);
  r.loop.use_refinement = false;
  const TaskReport rep = run_task(r);
  CHECK_FALSE(rep.success);
  CHECK(rep.refinements == 0);
  CHECK(rep.attempts == r.loop.n_retry);
}

TEST_CASE("exhausted refinements leave a complete trail") {
  HeuristicStrategist h;
  RunSetup r = setup_for("push_pick_board", 3, h);
  r.loop.n_retry = 1;
  r.loop.max_refinements = 2;
  r.loop.attempt_step_budget = 150;
  std::ostringstream trace;
  r.trace = &trace;
  const TaskReport rep = run_task(r);
  CHECK_FALSE(rep.success);
  CHECK(rep.reason == "budget");
  CHECK(rep.refinements == 2);
  CHECK(rep.attempts == 3);
  REQUIRE(rep.refinement_log.size() == 2);
  REQUIRE(rep.belief_history.size() == 3);
  for (std::size_t i = 0; i < rep.refinement_log.size(); ++i) {
    const RefinementEvent& e = rep.refinement_log[i];
    CHECK(e.cycle == static_cast<int>(i) + 1);
    CHECK_FALSE(e.kind.empty());
    CHECK_FALSE(e.explanation.empty());
    CHECK(e.new_theta == rep.belief_history[i + 1].second);
  }
  CHECK(rep.refinement_log[0].new_digest == rep.refinement_log[1].old_digest);

  int refinements = 0, attempts = 0;
  std::istringstream in(trace.str());
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    refinements += j["type"] == "refinement";
    attempts += j["type"] == "attempt_end";
  }
  CHECK(refinements == 2);
  CHECK(attempts == 3);
}

TEST_CASE("report JSON") {
  HeuristicStrategist h;
  RunSetup r = setup_for("pick_box", 42, h);
  const auto j = to_json(run_task(r));
  CHECK(j["outcome"] == "success");
  CHECK(j["attempts"] == 1);
  CHECK(j.contains("final_theta"));
  CHECK(j.contains("refinement_log"));
}
