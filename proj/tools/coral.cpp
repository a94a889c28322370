// coral: run, bench, replay and inspect memory.
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coral/harness.hpp"

namespace {

using namespace coral;
using nlohmann::json;

constexpr int kExitConfig = 2;

json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(std::string("cannot open ") + what + " file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + " " + path + ": malformed JSON at byte " +
                     std::to_string(e.byte));
  }
}

struct Common {
  std::string task;
  std::string scene;
  std::uint64_t seed = 0;
  std::string strategist = "heuristic";
  std::string config;
  std::string log_dir;
  std::string memory;
};

void add_common(CLI::App* app, Common& c, bool with_seed) {
  app->add_option("--task", c.task, "task id");
  app->add_option("--scene", c.scene, "scene file (JSON)");
  if (with_seed) app->add_option("--seed", c.seed, "random seed");
  app->add_option("--strategist", c.strategist, "heuristic | remote")
      ->check(CLI::IsMember({"heuristic", "remote"}));
  app->add_option("--config", c.config, "JSON overrides {mppi, sim, loop}");
  app->add_option("--log-dir", c.log_dir, "output directory");
  app->add_option("--memory", c.memory, "memory file (JSON lines)");
}

RunConfig to_run_config(const Common& c) {
  RunConfig rc;
  rc.task = c.task;
  if (!c.scene.empty()) {
    if (!std::filesystem::exists(c.scene)) throw std::runtime_error("scene file not found: " + c.scene);
    rc.scene_path = c.scene;
  }
  rc.seed = c.seed;
  rc.strategist = c.strategist;
  if (!c.config.empty()) apply_config(read_json_file(c.config, "config"), rc.mppi, rc.sim, rc.loop);
  if (!c.memory.empty()) rc.memory_path = c.memory;
  rc.log_dir = c.log_dir;
  return rc;
}

int cmd_run(const Common& c) {
  RunConfig rc = to_run_config(c);
  if (rc.log_dir.empty()) {
    rc.log_dir = std::filesystem::path("runs") /
                 ((rc.task.empty() ? std::string("scene") : rc.task) + "-" + std::to_string(rc.seed));
  }
  const RunResult res = execute_run(rc);
  const TaskReport& r = res.report;
  std::printf("%s seed %llu: %s (%s), %d attempts, %d refinements, %ld steps, path %.3f m\n",
              r.task.c_str(), static_cast<unsigned long long>(r.seed),
              r.success ? "success" : "failure", r.reason.c_str(), r.attempts, r.refinements,
              r.steps, r.path_length);
  for (const auto& e : r.events) std::printf("  event: %s\n", e.c_str());
  for (const auto& f : res.files) std::printf("  wrote %s\n", f.c_str());
  return 0;
}

int cmd_bench(const Common& c, const std::string& suite_path, const std::vector<std::string>& tasks,
              int seeds, const std::vector<std::string>& variants) {
  RunConfig rc = to_run_config(c);
  std::vector<BenchTask> suite;
  if (!suite_path.empty()) suite = suite_from_json(read_json_file(suite_path, "suite"));
  std::vector<std::string> ids = tasks;
  if (!c.task.empty()) ids.push_back(c.task);
  for (const auto& id : ids) {
    if (!is_supported_task(id)) throw ParameterDomainError("unknown task '" + id + "'");
    BenchTask t;
    t.task = id;
    t.seeds = seeds;
    t.randomization = default_randomization(id);
    if (!variants.empty()) t.variants = variants;
    if (rc.scene_path) t.scene_path = rc.scene_path;
    for (const auto& v : t.variants) {
      LoopConfig probe;
      apply_variant(v, probe);
    }
    suite.push_back(std::move(t));
  }
  const BenchResult res = run_bench(suite, rc, [](const BenchTrial& t) {
    std::fprintf(stderr, "%s/%s seed %llu: %s (%s) steps %ld\n", t.task.c_str(),
                 t.variant.c_str(), static_cast<unsigned long long>(t.seed),
                 t.success ? "success" : "failure", t.reason.c_str(), t.steps);
  });
  std::cout << format_table(res.rows);
  if (!rc.log_dir.empty()) {
    std::filesystem::create_directories(rc.log_dir);
    std::ofstream rows(rc.log_dir / "bench.csv");
    rows << "task,variant,trials,successes,median_steps,median_path\n";
    for (const auto& r : res.rows) {
      rows << r.task << ',' << r.variant << ',' << r.trials << ',' << r.successes << ','
           << r.median_steps << ',' << r.median_path << '\n';
    }
    std::ofstream trials(rc.log_dir / "trials.csv");
    trials << "task,variant,seed,success,reason,steps,path_length,attempts,refinements\n";
    for (const auto& t : res.trials) {
      trials << t.task << ',' << t.variant << ',' << t.seed << ',' << t.success << ",\""
             << t.reason << "\"," << t.steps << ',' << t.path_length << ',' << t.attempts << ','
             << t.refinements << '\n';
    }
  }
  return 0;
}

int cmd_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  const ReplayReport r = replay_trace(in);
  if (r.ok) {
    std::printf("replay ok: %ld step costs match\n", r.steps_checked);
    return 0;
  }
  std::printf("replay FAILED at line %ld: %s\n", r.line, r.message.c_str());
  if (r.step >= 0) std::printf("  logged %.17g recomputed %.17g\n", r.logged, r.recomputed);
  return 1;
}

int cmd_memory(const std::string& path, const std::string& action, const std::string& id) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("memory file not found: " + path);
  const MemoryStore store(path);
  for (const auto& w : store.warnings()) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (action == "list") {
    std::printf("%-8s %-18s %8s %10s  %s\n", "id", "task", "steps", "path", "task text");
    for (const auto& e : store.entries()) {
      std::printf("%-8s %-18s %8ld %10.4f  %s\n", e.id.c_str(), e.task.c_str(), e.steps,
                  e.path_length, e.task_text.c_str());
    }
    return 0;
  }
  for (const auto& e : store.entries()) {
    if (e.id == id) {
      std::cout << to_json(e).dump(2) << '\n';
      return 0;
    }
  }
  std::fprintf(stderr, "no memory entry '%s' in %s\n", id.c_str(), path.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coral: contact-rich planar manipulation with a strategist in the loop"};
  app.require_subcommand(1);

  Common run_opts, bench_opts;
  auto* run = app.add_subcommand("run", "run one task");
  add_common(run, run_opts, true);

  auto* bench = app.add_subcommand("bench", "seeded benchmark with ablation variants");
  add_common(bench, bench_opts, false);
  std::string suite;
  std::vector<std::string> bench_tasks, variants;
  int seeds = 10;
  bench->add_option("--suite", suite, "suite file (JSON)");
  bench->add_option("--tasks", bench_tasks, "task ids");
  bench->add_option("--seeds", seeds, "seeds per task")->check(CLI::NonNegativeNumber);
  bench->add_option("--variants", variants, "full no_memory no_refinement no_contact_strategy");

  auto* replay = app.add_subcommand("replay", "recompute logged costs from a trace");
  std::string trace;
  replay->add_option("trace", trace, "trace.jsonl")->required();

  auto* memory = app.add_subcommand("memory", "inspect a memory file");
  std::string memory_path = "memory.jsonl", memory_action, memory_id;
  memory->add_option("--memory", memory_path, "memory file");
  memory->add_option("action", memory_action, "list | show")
      ->required()
      ->check(CLI::IsMember({"list", "show"}));
  memory->add_option("id", memory_id, "entry id (show)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*bench) return cmd_bench(bench_opts, suite, bench_tasks, seeds, variants);
    if (*replay) return cmd_replay(trace);
    if (*memory) {
      if (memory_action == "show" && memory_id.empty()) {
        std::fprintf(stderr, "memory show needs an id\n");
        return kExitConfig;
      }
      return cmd_memory(memory_path, memory_action, memory_id);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return 0;
}
