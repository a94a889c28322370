#include "coral/control_loop.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "coral/rng.hpp"

namespace coral {

using nlohmann::json;

void LoopConfig::check() const {
  if (n_retry < 1) throw ParameterDomainError("loop: N_retry must be >= 1");
  if (replan_interval < 1) throw ParameterDomainError("loop: replan_interval must be >= 1");
  if (max_refinements < 0) throw ParameterDomainError("loop: max_refinements must be >= 0");
  if (attempt_step_budget < 0) throw ParameterDomainError("loop: step budget must be >= 0");
  if (!(K_f.array() >= 0.0).all()) throw ParameterDomainError("loop: K_f entries must be >= 0");
}

Control reactive_augment(const Control& u, const Vec2& x_des, const Vec2& x_measured,
                         const Vec2& K_f, double u_max) {
  const Control nu = u + K_f.cwiseProduct(x_des - x_measured);
  return nu.cwiseMax(-u_max).cwiseMin(u_max);
}

std::string plan_digest(const CostSpec& spec, const WorldBelief& belief) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump_spec(spec) + to_json(belief).dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TaskBrief brief_of(const Scene& scene, const SimConfig& sim) {
  TaskBrief b;
  b.id = scene.task;
  b.text = scene.task_text;
  b.target = scene.target;
  b.goal = scene.goal;
  b.flip_angle = scene.flip_angle;
  b.force_lo = scene.force_lo;
  b.force_hi = scene.force_hi;
  b.finger_radius = sim.finger_radius;
  return b;
}

AttemptResult run_attempt(const AttemptSetup& a, const StepSink& sink) {
  const Scene& scene = *a.scene;
  AttemptResult out;
  if (a.loop.attempt_step_budget <= 0) {
    out.reason = "budget";
    return out;
  }
  SimConfig eval_cfg = a.sim;
  eval_cfg.seed = derive_seed(a.seed, static_cast<std::uint64_t>(a.attempt));
  SimConfig plan_cfg = a.sim;
  plan_cfg.noise_std = 0.0;

  SimState world = make_state(scene.truth, scene.finger_start, eval_cfg.seed);
  const CostEvaluator cost(*a.spec, *a.belief);
  SuccessMonitor monitor(scene);

  NominalPlan plan = NominalPlan::zeros(a.mppi);
  plan.rng = derive_seed(a.seed, 1000 + static_cast<std::uint64_t>(a.attempt));

  std::size_t stage = 0;
  Control u = Control::Zero();
  FingerState predicted = world.finger;
  for (int k = 0; k < a.loop.attempt_step_budget; ++k) {
    if (k % a.loop.replan_interval == 0) {
      const SimState obs = observe(world, a.loop.observation);
      const RolloutContext ctx{&obs, a.belief, &cost, &plan_cfg, stage};
      PlanStep ps = plan_step(plan, ctx, a.mppi);
      plan = std::move(ps.plan);
      u = ps.u0;
      predicted = obs.finger;
    }
    const Vec2 x_des = predicted.position;
    advance_finger(predicted, u, plan_cfg, &a.belief->fixtures);
    const Control nu = reactive_augment(u, x_des, world.finger.position, a.loop.K_f, a.mppi.u_max);

    const Vec2 before = world.finger.position;
    step_inplace(world, nu, scene.truth, eval_cfg);
    out.path_length += (world.finger.position - before).norm();

    const StageStatus st = cost.status(world, stage);
    stage = st.active_stage;
    out.max_stage = std::max(out.max_stage, stage);

    EpisodeStep rec;
    rec.attempt = a.attempt;
    rec.step = k;
    rec.u = u;
    rec.nu = nu;
    rec.stage = stage;
    rec.blend_score = st.blend_score;
    rec.cost = cost.running(world, nu, st);
    rec.state = world;
    if (sink) sink(rec);

    out.steps = k + 1;
    const SuccessMonitor::Verdict v = monitor.update(world);
    if (v.done) {
      out.success = v.success;
      out.reason = v.reason;
      return out;
    }
  }
  out.reason = "budget";
  return out;
}

namespace {

json belief_json(const WorldBelief& b) { return to_json(b); }

json step_json(const EpisodeStep& s, const std::string& digest) {
  return {{"type", "step"},
          {"attempt", s.attempt},
          {"step", s.step},
          {"t", s.state.time},
          {"digest", digest},
          {"u", {s.u.x(), s.u.y()}},
          {"nu", {s.nu.x(), s.nu.y()}},
          {"stage", s.stage},
          {"score", s.blend_score},
          {"cost", s.cost},
          {"state", to_json(s.state)}};
}

}  // namespace

TaskReport run_task(const RunSetup& r) {
  if (!r.strategist) throw ParameterDomainError("run_task: no strategist");
  r.loop.check();
  r.mppi.check();
  if (!(r.sim.dt > 0.0) || !(r.sim.contact_stiffness > 0.0)) {
    throw ParameterDomainError("sim: dt and stiffness must be > 0");
  }
  const Scene& scene = r.scene;
  if (!is_supported_task(scene.task)) throw ParameterDomainError("unknown task " + scene.task);

  auto emit = [&](const json& j) {
    if (r.trace) *r.trace << j.dump() << '\n';
  };

  TaskReport rep;
  rep.task = scene.task;
  rep.seed = r.seed;
  rep.strategist = r.strategist->name();
  rep.truth = scene.truth;

  const TaskBrief brief = brief_of(scene, r.sim);
  WorldBelief belief = init_belief(scene.truth, scene.bias);
  rep.initial_belief = belief;

  emit({{"type", "run"},
        {"task", scene.task},
        {"seed", r.seed},
        {"strategist", rep.strategist},
        {"scene", to_json(scene)}});

  CostSpec spec;
  RegionMap regions;
  std::optional<Retrieval> hit;
  if (r.loop.use_memory && r.memory) {
    hit = r.memory->retrieve(scene.task_text, belief, r.loop.memory_threshold);
  }
  if (hit) {
    rep.memory_hit = true;
    rep.memory_id = hit->entry.id;
    rep.memory_similarity = hit->similarity;
    spec = hit->entry.spec;
    regions = hit->entry.regions;
    ParamMap stored;
    for (const auto& [label, o] : hit->entry.theta.objects) {
      if (belief.contains(label)) stored[label] = ParamUpdate{o.mass, o.friction};
    }
    RefinementResult applied = apply_refinement(belief, stored, 0);
    belief = applied.belief;
    for (auto& w : applied.warnings) rep.events.push_back("memory: " + w);
    rep.events.push_back("memory hit " + hit->entry.id + " (similarity " +
                         std::to_string(hit->similarity) + ")");
    emit({{"type", "memory"}, {"event", "hit"}, {"id", hit->entry.id}, {"similarity", hit->similarity}});
  } else {
    StrategistRequest req;
    req.phase = Phase::formulate;
    req.task = brief;
    req.belief = belief;
    StrategistResponse resp = r.strategist->formulate(req);
    for (auto& e : resp.events) rep.events.push_back(e);
    if (!resp.spec) throw ValidationError({"strategist returned no cost spec"});
    spec = *resp.spec;
    if (resp.regions) regions = *resp.regions;
    if (resp.params) {
      RefinementResult applied = apply_refinement(belief, *resp.params, 0);
      belief = applied.belief;
      for (auto& w : applied.warnings) rep.events.push_back(w);
    }
  }
  // validates labels before anything runs
  (void)CostEvaluator(spec, belief);

  auto make_strategy = [&](const WorldBelief& b) {
    Rng rng(derive_seed(r.seed, 77));
    ContactStrategy s = build_strategy(regions, b, scene.finger_start, r.sim.finger_radius, rng,
                                       r.loop.use_contact_strategy ? kDefaultAttractorWeight : 0.0);
    for (auto& e : s.events) rep.events.push_back(e);
    return s;
  };
  ContactStrategy strategy = make_strategy(belief);

  rep.belief_history.emplace_back(0, belief);
  std::set<std::string> emitted;
  std::vector<EpisodeStep> window;
  std::vector<std::string> plan_actions;
  std::size_t window_max_stage = 0;
  int failures = 0;
  int cycle = 0;
  int attempt = 0;
  const int target_index = [&] {
    int i = 0;
    for (const auto& [label, o] : scene.truth.objects) {
      if (label == scene.target) return i;
      ++i;
    }
    return -1;
  }();

  while (true) {
    const CostSpec effective = attach_attractor(spec, strategy);
    const std::string digest = plan_digest(effective, belief);
    if (emitted.insert(digest).second) {
      emit({{"type", "spec"}, {"digest", digest}, {"spec", to_json(effective)}, {"world", belief_json(belief)}});
    }
    emit({{"type", "attempt_start"}, {"attempt", attempt}, {"cycle", cycle}});

    AttemptSetup setup;
    setup.scene = &scene;
    setup.belief = &belief;
    setup.spec = &effective;
    setup.mppi = r.mppi;
    setup.mppi.seed = derive_seed(r.seed, 500 + static_cast<std::uint64_t>(attempt));
    setup.sim = r.sim;
    setup.loop = r.loop;
    setup.attempt = attempt;
    setup.seed = r.seed;

    const AttemptResult res = run_attempt(setup, [&](const EpisodeStep& s) {
      emit(step_json(s, digest));
      rep.force.push_back({s.attempt, s.step, s.state.time, s.state.finger_force_magnitude(target_index)});
      window.push_back(s);
    });
    rep.steps += res.steps;
    rep.path_length += res.path_length;
    rep.attempt_log.push_back({attempt, cycle, res.success, res.reason, res.steps, res.path_length, res.max_stage});
    window_max_stage = std::max(window_max_stage, res.max_stage);
    emit({{"type", "attempt_end"},
          {"attempt", attempt},
          {"success", res.success},
          {"reason", res.reason},
          {"steps", res.steps},
          {"path_length", res.path_length}});
    ++attempt;

    if (res.success) {
      rep.success = true;
      rep.reason = res.reason;
      if (r.loop.use_memory && r.memory) {
        MemoryEntry e;
        e.task = scene.task;
        e.task_text = scene.task_text;
        e.theta = belief;
        e.spec = spec;
        e.regions = regions;
        e.steps = rep.steps;
        e.path_length = rep.path_length;
        try {
          const std::string id = r.memory->store(e);
          rep.events.push_back("stored memory entry " + id);
          emit({{"type", "memory"}, {"event", "stored"}, {"id", id}});
        } catch (const std::exception& ex) {
          rep.events.push_back(std::string("memory store rejected: ") + ex.what());
        }
      }
      break;
    }
    rep.reason = res.reason;
    if (++failures < r.loop.n_retry) continue;
    if (!r.loop.use_refinement || cycle >= r.loop.max_refinements) break;

    // outer loop: params when the belief explains the log badly, otherwise the plan
    const double g = belief.fixtures.gravity;
    const auto samples = pushing_samples(window, scene.target, g);
    const double residual = identification_residual(samples, belief.at(scene.target), g);
    StrategistRequest req;
    req.task = brief;
    req.belief = belief;
    req.episode = window;
    req.failing_spec = spec;
    req.regions = regions;
    req.stages_reached = window_max_stage;
    req.failure_reason = res.reason;
    req.previous_actions = plan_actions;

    RefinementEvent ev;
    ev.cycle = cycle + 1;
    ev.after_attempt = attempt - 1;
    ev.residual = std::isfinite(residual) ? residual : -1.0;
    ev.old_digest = plan_digest(spec, belief);
    ev.old_theta = belief;

    bool refined = false;
    if (samples.size() >= kMinIdentificationSamples && residual > r.loop.residual_threshold) {
      req.phase = Phase::refine_params;
      StrategistResponse resp = r.strategist->refine_params(req);
      for (auto& e : resp.events) ev.warnings.push_back(e);
      if (resp.params) {
        RefinementResult applied = apply_refinement(belief, *resp.params, cycle + 1);
        belief = applied.belief;
        for (auto& w : applied.warnings) ev.warnings.push_back(w);
        ev.kind = "params";
        ev.action = resp.action;
        ev.explanation = resp.explanation;
        refined = true;
      } else {
        ev.warnings.push_back("parameter refinement produced no update: " + resp.explanation);
      }
    }
    if (!refined) {
      req.phase = Phase::refine_plan;
      StrategistResponse resp = r.strategist->refine_plan(req);
      for (auto& e : resp.events) ev.warnings.push_back(e);
      if (resp.spec) spec = *resp.spec;
      if (resp.regions) regions = *resp.regions;
      if (resp.params) {
        RefinementResult applied = apply_refinement(belief, *resp.params, cycle + 1);
        belief = applied.belief;
        for (auto& w : applied.warnings) ev.warnings.push_back(w);
      }
      ev.kind = "plan";
      ev.action = resp.action;
      ev.explanation = resp.explanation;
      plan_actions.push_back(resp.action);
    }
    strategy = make_strategy(belief);
    ++cycle;
    ev.new_theta = belief;
    ev.new_digest = plan_digest(spec, belief);
    rep.belief_history.emplace_back(cycle, belief);
    emit({{"type", "refinement"},
          {"cycle", ev.cycle},
          {"kind", ev.kind},
          {"action", ev.action},
          {"residual", ev.residual},
          {"old_digest", ev.old_digest},
          {"new_digest", ev.new_digest},
          {"old_theta", objects_to_json(ev.old_theta)},
          {"new_theta", objects_to_json(ev.new_theta)},
          {"explanation", ev.explanation}});
    rep.refinement_log.push_back(std::move(ev));
    failures = 0;
    window.clear();
    window_max_stage = 0;
  }

  rep.attempts = attempt;
  rep.refinements = cycle;
  rep.final_belief = belief;
  rep.final_digest = plan_digest(attach_attractor(spec, strategy), belief);
  emit({{"type", "end"}, {"success", rep.success}, {"attempts", rep.attempts}, {"steps", rep.steps}});
  return rep;
}

json to_json(const TaskReport& r) {
  json attempts = json::array();
  for (const auto& a : r.attempt_log) {
    attempts.push_back({{"attempt", a.attempt},
                        {"cycle", a.cycle},
                        {"success", a.success},
                        {"reason", a.reason},
                        {"steps", a.steps},
                        {"path_length", a.path_length},
                        {"max_stage", a.max_stage}});
  }
  json refinements = json::array();
  for (const auto& e : r.refinement_log) {
    refinements.push_back({{"cycle", e.cycle},
                           {"after_attempt", e.after_attempt},
                           {"kind", e.kind},
                           {"action", e.action},
                           {"residual", e.residual},
                           {"old_digest", e.old_digest},
                           {"new_digest", e.new_digest},
                           {"old_theta", objects_to_json(e.old_theta)},
                           {"new_theta", objects_to_json(e.new_theta)},
                           {"explanation", e.explanation},
                           {"warnings", e.warnings}});
  }
  return {{"task", r.task},
          {"seed", r.seed},
          {"strategist", r.strategist},
          {"outcome", r.success ? "success" : "failure"},
          {"reason", r.reason},
          {"attempts", r.attempts},
          {"refinements", r.refinements},
          {"steps", r.steps},
          {"path_length", r.path_length},
          {"memory_hit", r.memory_hit},
          {"memory_id", r.memory_id},
          {"initial_theta", objects_to_json(r.initial_belief)},
          {"final_theta", objects_to_json(r.final_belief)},
          {"true_theta", objects_to_json(r.truth)},
          {"final_digest", r.final_digest},
          {"attempt_log", std::move(attempts)},
          {"refinement_log", std::move(refinements)},
          {"events", r.events}};
}

}  // namespace coral
