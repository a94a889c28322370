#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "coral/control_loop.hpp"
#include "coral/memory_unit.hpp"

using namespace coral;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("coral_mem_" + name + ".jsonl");
  std::filesystem::remove(p);
  return p;
}

MemoryEntry entry_for(const std::string& task, double friction = -1.0) {
  const Scene scene = default_scene(task);
  MemoryEntry e;
  e.task = task;
  e.task_text = scene.task_text;
  e.theta = scene.truth;
  if (friction > 0.0) e.theta.objects.at(scene.target).friction = friction;
  const TaskBrief b = brief_of(scene, SimConfig{});
  e.spec = task_spec(b, e.theta);
  e.regions = task_regions(b, e.theta);
  e.steps = 321;
  e.path_length = 0.42;
  return e;
}

}  // namespace

TEST_CASE("similarity pieces") {
  CHECK(tokenize("Push the BOARD, then pick-it up!") ==
        std::vector<std::string>{"push", "the", "board", "then", "pick", "it", "up"});
  CHECK(token_overlap("a b c", "a b c") == 1.0);
  CHECK(token_overlap("a b", "b c") == doctest::Approx(1.0 / 3.0));
  CHECK(token_overlap("", "") == 1.0);

  WorldBelief a = default_scene("flip_wall").truth;
  WorldBelief b = a;
  CHECK(theta_distance(a, b) == 0.0);
  b.objects.begin()->second.mass += 0.5 * (kMassMax - kMassMin);
  CHECK(theta_distance(a, b) == doctest::Approx(0.5));
  WorldBelief c;
  CHECK(theta_distance(a, c) == doctest::Approx(std::sqrt(2.0 * a.objects.size())));
}

TEST_CASE("store and retrieve") {
  MemoryStore store;
  CHECK_FALSE(store.retrieve("anything", WorldBelief{}));

  const MemoryEntry e = entry_for("flip_wall");
  const std::string id = store.store(e);
  SUBCASE("identical query has similarity 1") {
    const auto r = store.retrieve(e.task_text, e.theta);
    REQUIRE(r);
    CHECK(r->entry.id == id);
    CHECK(r->similarity == doctest::Approx(1.0));
  }
  SUBCASE("duplicate stores get distinct ids") {
    const std::string id2 = store.store(e);
    CHECK(id2 != id);
    CHECK(store.entries().size() == 2);
  }
  SUBCASE("the higher of two matches wins") {
    // identical text; friction offsets chosen so exp(-d) is 0.64 and 0.5
    MemoryStore two;
    const double range = kFrictionMax - kFrictionMin;
    const double base = e.theta.objects.begin()->second.friction;
    MemoryEntry hi = entry_for("flip_wall", base - std::log(0.64) * range);
    MemoryEntry lo = entry_for("flip_wall", base + std::log(2.0) * range);
    CHECK(similarity(e.task_text, e.theta, hi) == doctest::Approx(0.82));
    CHECK(similarity(e.task_text, e.theta, lo) == doctest::Approx(0.75));
    two.store(lo);
    const std::string want = two.store(hi);
    two.store(lo);
    const auto r = two.retrieve(e.task_text, e.theta);
    REQUIRE(r);
    CHECK(r->entry.id == want);
    CHECK(r->similarity == doctest::Approx(0.82));
    CHECK_FALSE(two.retrieve(e.task_text, e.theta, 0.83));
  }
  SUBCASE("nothing below the threshold is ever returned") {
    for (const auto& t : supported_tasks()) store.store(entry_for(t));
    for (const auto& t : supported_tasks()) {
      const Scene s = default_scene(t);
      for (double thr : {0.5, 0.7, 0.9, 0.99}) {
        const auto r = store.retrieve(s.task_text + " quickly", s.truth, thr);
        if (r) CHECK(r->similarity >= thr);
        for (const auto& m : store.entries()) {
          if (similarity(s.task_text + " quickly", s.truth, m) >= thr) CHECK(r);
        }
      }
    }
  }
}

TEST_CASE("validation on store") {
  MemoryStore store;
  MemoryEntry bad = entry_for("pick_box");
  bad.spec.stages.clear();
  CHECK_THROWS_AS(store.store(bad), ValidationError);
  MemoryEntry ghost = entry_for("pick_box");
  ghost.regions["ghost"] = {ContactRegion{}};
  CHECK_THROWS_AS(store.store(ghost), ValidationError);
  CHECK(store.entries().empty());
}

TEST_CASE("persistence") {
  const auto path = temp_file("persist");
  std::string id;
  {
    MemoryStore store(path);
    CHECK(store.entries().empty());
    id = store.store(entry_for("push_pick_board"));
    store.store(entry_for("flip_wall"));
  }
  {
    MemoryStore again(path);
    REQUIRE(again.entries().size() == 2);
    const MemoryEntry& e = again.entries()[0];
    const MemoryEntry want = entry_for("push_pick_board");
    CHECK(e.id == id);
    CHECK(e.spec == want.spec);
    CHECK(e.regions == want.regions);
    CHECK(e.theta == want.theta);
    CHECK(e.steps == 321);
    // ids continue after a reload
    CHECK(again.store(want) == "mem-2");
  }
  SUBCASE("corrupt lines are skipped with a warning") {
    std::ofstream(path, std::ios::app) << "{not json\n";
    MemoryStore reloaded(path);
    CHECK(reloaded.entries().size() == 3);
    REQUIRE(reloaded.warnings().size() == 1);
    CHECK(reloaded.warnings()[0].find(":4:") != std::string::npos);
  }
  std::filesystem::remove(path);
}
