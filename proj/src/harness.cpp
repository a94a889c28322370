#include "coral/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "coral/remote_strategist.hpp"

namespace coral {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

template <typename T>
Setter setter(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

Setter vec_setter(Vec2& field) {
  return [&field](const json& v) {
    if (!v.is_array() || v.size() != 2) throw ParseError("expected a two-element array");
    field = {v[0].get<double>(), v[1].get<double>()};
  };
}

void apply_section(const json& sec, const std::string& name,
                   const std::map<std::string, Setter>& setters) {
  if (!sec.is_object()) throw ParseError("config: '" + name + "' must be an object");
  for (auto it = sec.begin(); it != sec.end(); ++it) {
    auto s = setters.find(it.key());
    if (s == setters.end()) throw ParseError("config: unknown key '" + name + "." + it.key() + "'");
    try {
      s->second(it.value());
    } catch (const json::exception& e) {
      throw ParseError("config: '" + name + "." + it.key() + "': " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("config: '" + name + "." + it.key() + "': " + e.what());
    }
  }
}

}  // namespace

void apply_config(const json& j, MppiParams& mppi, SimConfig& sim, LoopConfig& loop) {
  if (!j.is_object()) throw ParseError("config: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "mppi") {
      apply_section(it.value(), key,
                    {{"K", setter(mppi.K)},
                     {"H", setter(mppi.H)},
                     {"sigma", vec_setter(mppi.sigma)},
                     {"u_max", setter(mppi.u_max)},
                     {"beta", setter(mppi.beta)},
                     {"phi_ess", setter(mppi.phi_ess)},
                     {"bisection_steps", setter(mppi.bisection_steps)},
                     {"lambda_lo", setter(mppi.lambda_lo)},
                     {"threads", setter(mppi.threads)}});
    } else if (key == "sim") {
      apply_section(it.value(), key,
                    {{"dt", setter(sim.dt)},
                     {"contact_stiffness", setter(sim.contact_stiffness)},
                     {"contact_damping", setter(sim.contact_damping)},
                     {"friction_viscosity", setter(sim.friction_viscosity)},
                     {"gravity", setter(sim.gravity)},
                     {"finger_radius", setter(sim.finger_radius)},
                     {"finger_lag", setter(sim.finger_lag)},
                     {"finger_stiffness", setter(sim.finger_stiffness)},
                     {"finger_damping", setter(sim.finger_damping)},
                     {"finger_friction", setter(sim.finger_friction)},
                     {"control_period", setter(sim.control_period)},
                     {"u_max", setter(sim.u_max)},
                     {"grasp_radius", setter(sim.grasp_radius)},
                     {"grasp_speed_eps", setter(sim.grasp_speed_eps)},
                     {"noise_std", setter(sim.noise_std)}});
    } else if (key == "loop") {
      apply_section(it.value(), key,
                    {{"n_retry", setter(loop.n_retry)},
                     {"max_refinements", setter(loop.max_refinements)},
                     {"attempt_step_budget", setter(loop.attempt_step_budget)},
                     {"replan_interval", setter(loop.replan_interval)},
                     {"K_f", vec_setter(loop.K_f)},
                     {"use_memory", setter(loop.use_memory)},
                     {"use_refinement", setter(loop.use_refinement)},
                     {"use_contact_strategy", setter(loop.use_contact_strategy)},
                     {"memory_threshold", setter(loop.memory_threshold)},
                     {"residual_threshold", setter(loop.residual_threshold)},
                     {"observation_position_std", setter(loop.observation.position)},
                     {"observation_rotation_std", setter(loop.observation.rotation)}});
    } else {
      throw ParseError("config: unknown section '" + key + "' (expected mppi, sim, loop)");
    }
  }
}

Scene resolve_scene(const RunConfig& cfg) {
  if (cfg.scene_path) {
    Scene s = load_scene(*cfg.scene_path);
    if (!cfg.task.empty() && cfg.task != s.task) {
      throw ParameterDomainError("scene " + cfg.scene_path->string() + " is for task '" + s.task +
                                 "', not '" + cfg.task + "'");
    }
    return s;
  }
  if (cfg.task.empty()) throw ParameterDomainError("no task given (use --task or --scene)");
  return default_scene(cfg.task);
}

std::unique_ptr<Strategist> make_strategist(const std::string& kind) {
  if (kind == "heuristic") return std::make_unique<HeuristicStrategist>();
  if (kind == "remote") {
    return std::make_unique<RemoteStrategist>(
        std::make_unique<HttpChatClient>(RemoteConfig::from_env()));
  }
  throw ParameterDomainError("unknown strategist '" + kind + "' (heuristic | remote)");
}

void write_force_csv(std::ostream& out, const TaskReport& report, const Scene& scene) {
  out << "attempt,step,t,force,band_lo,band_hi\n";
  char buf[160];
  for (const ForceRow& r : report.force) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.4f,%.6f,%g,%g\n", r.attempt, r.step, r.t, r.force,
                  scene.force_lo, scene.force_hi);
    out << buf;
  }
}

void write_params_csv(std::ostream& out, const TaskReport& report) {
  out << "cycle,label,believed_mass,true_mass,believed_friction,true_friction\n";
  char buf[256];
  for (const auto& [cycle, belief] : report.belief_history) {
    for (const auto& [label, o] : belief.objects) {
      const ObjectBelief& t = report.truth.at(label);
      std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.6f,%.6f\n", cycle, label.c_str(), o.mass,
                    t.mass, o.friction, t.friction);
      out << buf;
    }
  }
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

RunResult execute_run(const RunConfig& cfg) {
  const Scene scene = resolve_scene(cfg);
  std::unique_ptr<Strategist> strategist = make_strategist(cfg.strategist);
  MemoryStore memory(cfg.memory_path.value_or(std::filesystem::path{}));

  RunResult res;
  std::ofstream trace;
  if (!cfg.log_dir.empty()) {
    std::filesystem::create_directories(cfg.log_dir);
    trace = open_out(cfg.log_dir / "trace.jsonl");
  }

  RunSetup setup;
  setup.scene = scene;
  setup.strategist = strategist.get();
  setup.memory = &memory;
  setup.loop = cfg.loop;
  setup.mppi = cfg.mppi;
  setup.sim = cfg.sim;
  setup.seed = cfg.seed;
  setup.trace = cfg.log_dir.empty() ? nullptr : &trace;
  res.report = run_task(setup);
  for (const auto& w : memory.warnings()) res.report.events.push_back(w);

  if (!cfg.log_dir.empty()) {
    res.files.push_back((cfg.log_dir / "trace.jsonl").string());
    open_out(cfg.log_dir / "report.json") << to_json(res.report).dump(2) << '\n';
    res.files.push_back((cfg.log_dir / "report.json").string());
    auto force = open_out(cfg.log_dir / "force.csv");
    write_force_csv(force, res.report, scene);
    res.files.push_back((cfg.log_dir / "force.csv").string());
    auto params = open_out(cfg.log_dir / "params.csv");
    write_params_csv(params, res.report);
    res.files.push_back((cfg.log_dir / "params.csv").string());
  }
  return res;
}

// ---------------------------------------------------------------------------------------------

Randomization default_randomization(const std::string& task) {
  Randomization r;
  if (task == "push_pick_board") {
    r.mass = {0.4, 0.8};
    r.friction = {0.3, 0.6};
  }
  return r;
}

namespace {

std::pair<double, double> range_of(const json& v, const std::string& what) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ParseError("suite: " + what + " must be [lo, hi]");
  }
  const double lo = v[0].get<double>(), hi = v[1].get<double>();
  if (!(lo > 0.0) || !(hi >= lo)) throw ParameterDomainError("suite: " + what + " needs 0 < lo <= hi");
  return {lo, hi};
}

}  // namespace

std::vector<BenchTask> suite_from_json(const json& j) {
  if (!j.is_object() || !j.contains("tasks") || !j["tasks"].is_array()) {
    throw ParseError("suite: expected {\"tasks\": [...]}");
  }
  std::vector<BenchTask> out;
  try {
    for (const json& t : j["tasks"]) {
      BenchTask b;
      b.task = t.at("task").get<std::string>();
      if (!is_supported_task(b.task)) throw ParameterDomainError("suite: unknown task " + b.task);
      b.seeds = t.value("seeds", b.seeds);
      if (b.seeds < 0) throw ParameterDomainError("suite: seeds must be >= 0");
      b.first_seed = t.value("first_seed", b.first_seed);
      if (t.contains("variants")) b.variants = t["variants"].get<std::vector<std::string>>();
      for (const auto& v : b.variants) {
        LoopConfig probe;
        apply_variant(v, probe);
      }
      if (t.contains("scene")) b.scene_path = t["scene"].get<std::string>();
      b.randomization = default_randomization(b.task);
      if (t.contains("randomize")) {
        const json& r = t["randomize"];
        b.randomization.pose_jitter = r.value("pose_jitter", b.randomization.pose_jitter);
        if (r.contains("mass")) {
          if (r["mass"].is_null()) b.randomization.mass.reset();
          else b.randomization.mass = range_of(r["mass"], "mass");
        }
        if (r.contains("friction")) {
          if (r["friction"].is_null()) b.randomization.friction.reset();
          else b.randomization.friction = range_of(r["friction"], "friction");
        }
      }
      out.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("suite: ") + e.what());
  }
  return out;
}

void apply_variant(const std::string& variant, LoopConfig& loop) {
  if (variant == "full") return;
  if (variant == "no_memory") loop.use_memory = false;
  else if (variant == "no_refinement") loop.use_refinement = false;
  else if (variant == "no_contact_strategy") loop.use_contact_strategy = false;
  else {
    throw ParameterDomainError("unknown variant '" + variant +
                               "' (full, no_memory, no_refinement, no_contact_strategy)");
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return 0.5 * (v[(n - 1) / 2] + v[n / 2]);
}

BenchResult run_bench(const std::vector<BenchTask>& suite, const RunConfig& base,
                      const std::function<void(const BenchTrial&)>& progress) {
  BenchResult out;
  std::optional<MemoryStore> seed_memory;
  if (base.memory_path) seed_memory.emplace(*base.memory_path);

  for (const BenchTask& t : suite) {
    RunConfig rc = base;
    rc.task = t.task;
    rc.scene_path = t.scene_path;
    const Scene scene = resolve_scene(rc);
    for (const std::string& variant : t.variants) {
      BenchRow row;
      row.task = t.task;
      row.variant = variant;
      std::vector<double> steps, paths;
      for (int k = 0; k < t.seeds; ++k) {
        const std::uint64_t seed = t.first_seed + static_cast<std::uint64_t>(k);
        BenchTrial trial;
        trial.task = t.task;
        trial.variant = variant;
        trial.seed = seed;
        try {
          RunSetup setup;
          setup.scene = randomize(scene, t.randomization, seed);
          std::unique_ptr<Strategist> strategist = make_strategist(base.strategist);
          MemoryStore memory;
          if (seed_memory) {
            for (const auto& e : seed_memory->entries()) memory.store(e);
          }
          setup.strategist = strategist.get();
          setup.memory = &memory;
          setup.loop = base.loop;
          apply_variant(variant, setup.loop);
          setup.mppi = base.mppi;
          setup.sim = base.sim;
          setup.seed = seed;
          const TaskReport rep = run_task(setup);
          trial.success = rep.success;
          trial.reason = rep.reason;
          trial.steps = rep.steps;
          trial.path_length = rep.path_length;
          trial.attempts = rep.attempts;
          trial.refinements = rep.refinements;
          if (!base.log_dir.empty()) {
            const auto dir = base.log_dir / t.task / variant / ("seed-" + std::to_string(seed));
            std::filesystem::create_directories(dir);
            open_out(dir / "report.json") << to_json(rep).dump(2) << '\n';
          }
        } catch (const std::exception& e) {
          trial.reason = std::string("error: ") + e.what();
        }
        ++row.trials;
        row.successes += trial.success;
        steps.push_back(static_cast<double>(trial.steps));
        paths.push_back(trial.path_length);
        out.trials.push_back(trial);
        if (progress) progress(trial);
      }
      row.median_steps = median(steps);
      row.median_path = median(paths);
      out.rows.push_back(row);
    }
  }
  return out;
}

std::string format_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-18s %-20s %6s %9s %12s %12s\n", "task", "variant", "trials",
                "successes", "median_steps", "median_path");
  out << buf;
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %-20s %6d %9d %12.1f %12.4f\n", r.task.c_str(),
                  r.variant.c_str(), r.trials, r.successes, r.median_steps, r.median_path);
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------------------------

ReplayReport replay_trace(std::istream& in) {
  ReplayReport rep;
  std::map<std::string, CostEvaluator> evaluators;
  std::string line;
  long lineno = 0;
  auto fail = [&](std::string msg) {
    rep.ok = false;
    rep.line = lineno;
    rep.message = std::move(msg);
    return rep;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return fail("malformed JSON");
    const std::string type = j.value("type", std::string{});
    try {
      if (type == "spec") {
        const WorldBelief world = world_from_json(j.at("world"));
        CostSpec spec = spec_from_json(j.at("spec"), &world).spec;
        evaluators.insert_or_assign(j.at("digest").get<std::string>(),
                                    CostEvaluator(std::move(spec), world));
      } else if (type == "step") {
        const std::string digest = j.at("digest").get<std::string>();
        auto it = evaluators.find(digest);
        if (it == evaluators.end()) return fail("step refers to unknown spec digest " + digest);
        const SimState state = sim_state_from_json(j.at("state"));
        const Control nu{j.at("nu").at(0).get<double>(), j.at("nu").at(1).get<double>()};
        StageStatus st;
        st.active_stage = j.at("stage").get<std::size_t>();
        st.blend_score = j.at("score").get<double>();
        const double logged = j.at("cost").get<double>();
        const double again = it->second.running(state, nu, st);
        ++rep.steps_checked;
        if (!(std::abs(again - logged) <= 1e-9 * std::max(1.0, std::abs(logged)))) {
          rep.attempt = j.at("attempt").get<int>();
          rep.step = j.at("step").get<int>();
          rep.logged = logged;
          rep.recomputed = again;
          return fail("cost diverges at attempt " + std::to_string(rep.attempt) + " step " +
                      std::to_string(rep.step));
        }
      }
    } catch (const std::exception& e) {
      return fail(std::string("invalid ") + type + " record: " + e.what());
    }
  }
  if (rep.steps_checked == 0) {
    rep.ok = false;
    rep.message = "no step records in trace";
  }
  return rep;
}

}  // namespace coral
