#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "coral/harness.hpp"

using namespace coral;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("coral_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// exit status of a shell command, stderr captured into `err`
int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(CORAL_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("shipped scene files match the built-in scenes") {
  for (const auto& id : supported_tasks()) {
    CAPTURE(id);
    const fs::path p = fs::path(CORAL_SCENES_DIR) / (id + ".json");
    REQUIRE(fs::exists(p));
    CHECK(to_json(load_scene(p)) == to_json(default_scene(id)));
  }
  CHECK_THROWS_AS(default_scene("juggle"), ParameterDomainError);
}

TEST_CASE("config overrides") {
  MppiParams mppi;
  SimConfig sim;
  LoopConfig loop;
  apply_config(json::parse(R"({"mppi": {"K": 64, "H": 16}, "loop": {"n_retry": 2}, "sim": {"dt": 0.005}})"),
               mppi, sim, loop);
  CHECK(mppi.K == 64);
  CHECK(mppi.H == 16);
  CHECK(loop.n_retry == 2);
  CHECK(sim.dt == 0.005);
  try {
    apply_config(json::parse(R"({"mppi": {"kappa": 1}})"), mppi, sim, loop);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("kappa") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_config(json::parse(R"({"planner": {}})"), mppi, sim, loop), ParseError);
  CHECK_THROWS_AS(apply_config(json::parse(R"({"mppi": {"K": "many"}})"), mppi, sim, loop), ParseError);
}

TEST_CASE("run artifacts and replay") {
  const fs::path dir = scratch("replay");
  RunConfig cfg;
  cfg.task = "pick_box";
  cfg.seed = 5;
  cfg.log_dir = dir;
  const RunResult res = execute_run(cfg);
  CHECK(res.report.success);
  for (const char* f : {"trace.jsonl", "report.json", "force.csv", "params.csv"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(slurp(dir / "force.csv").rfind("attempt,step,t,force,band_lo,band_hi\n", 0) == 0);
  CHECK(slurp(dir / "params.csv").rfind("cycle,label,believed_mass,true_mass,believed_friction,true_friction\n", 0) == 0);

  SUBCASE("fresh trace replays cleanly") {
    std::ifstream in(dir / "trace.jsonl");
    const ReplayReport r = replay_trace(in);
    CHECK(r.ok);
    CHECK(r.steps_checked == res.report.steps);
  }
  SUBCASE("a corrupted cost is reported at its step") {
    std::istringstream in(slurp(dir / "trace.jsonl"));
    std::ostringstream out;
    std::string line;
    long lineno = 0, corrupted_line = 0;
    while (std::getline(in, line)) {
      ++lineno;
      json j = json::parse(line);
      if (j["type"] == "step" && j["step"] == 40) {
        j["cost"] = j["cost"].get<double>() * 1.001 + 1e-6;
        corrupted_line = lineno;
      }
      out << j.dump() << '\n';
    }
    REQUIRE(corrupted_line > 0);
    std::istringstream bad(out.str());
    const ReplayReport r = replay_trace(bad);
    CHECK_FALSE(r.ok);
    CHECK(r.step == 40);
    CHECK(r.line == corrupted_line);
  }
  SUBCASE("a trace without steps does not pass") {
    std::istringstream empty("");
    CHECK_FALSE(replay_trace(empty).ok);
  }
  fs::remove_all(dir);
}

TEST_CASE("bench bookkeeping") {
  CHECK(std::isnan(median({})));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);

  LoopConfig loop;
  apply_variant("no_refinement", loop);
  CHECK_FALSE(loop.use_refinement);
  CHECK_THROWS_AS(apply_variant("turbo", loop), ParameterDomainError);

  const BenchResult empty = run_bench({}, RunConfig{});
  CHECK(empty.trials.empty());
  CHECK(empty.rows.empty());

  const auto suite = suite_from_json(json::parse(
      R"({"tasks": [{"task": "pick_box", "seeds": 2, "variants": ["full", "no_memory"]}]})"));
  REQUIRE(suite.size() == 1);
  const BenchResult res = run_bench(suite, RunConfig{});
  CHECK(res.trials.size() == 4);
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].trials == 2);
  CHECK(format_table(res.rows).find("no_memory") != std::string::npos);
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cmd");
  const fs::path err = dir / "stderr.txt";

  SUBCASE("run writes a report; repeated runs give identical traces") {
    REQUIRE(run_cli("run --task flip_wall --seed 42 --log-dir " + (dir / "a").string(), err) == 0);
    REQUIRE(run_cli("run --task flip_wall --seed 42 --log-dir " + (dir / "b").string(), err) == 0);
    const json report = json::parse(slurp(dir / "a" / "report.json"));
    CHECK(report.contains("outcome"));
    CHECK(slurp(dir / "a" / "trace.jsonl") == slurp(dir / "b" / "trace.jsonl"));
    CHECK(run_cli("replay " + (dir / "a" / "trace.jsonl").string(), err) == 0);
  }
  SUBCASE("missing scene file exits 2 and names the path") {
    const std::string missing = (dir / "nowhere.json").string();
    CHECK(run_cli("run --scene " + missing + " --seed 1", err) == 2);
    CHECK(slurp(err).find(missing) != std::string::npos);
  }
  SUBCASE("empty bench exits 0") {
    CHECK(run_cli("bench --seeds 0", err) == 0);
  }
  SUBCASE("bad configuration exits 2") {
    std::ofstream(dir / "cfg.json") << R"({"mppi": {"K": 0}})";
    CHECK(run_cli("run --task pick_box --config " + (dir / "cfg.json").string() + " --log-dir " +
                      (dir / "c").string(),
                  err) == 2);
    CHECK(run_cli("run --task juggle", err) == 2);
  }
  fs::remove_all(dir);
}
