#include "coral/strategist.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace coral {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::formulate: return "formulate";
    case Phase::refine_plan: return "refine_plan";
    case Phase::refine_params: return "refine_params";
  }
  return "?";
}

Vec2 finger_force_vector(const SimState& state, int index) {
  Vec2 f = Vec2::Zero();
  for (const auto& c : state.contacts) {
    if (c.kind != ContactKind::finger || c.object != index) continue;
    const Vec2 t{-c.normal.y(), c.normal.x()};
    f += c.normal_force * c.normal + c.tangential_force * t;
  }
  return f;
}

std::vector<EpisodeStep> episode_tail(const std::vector<EpisodeStep>& episode, std::size_t n) {
  std::vector<EpisodeStep> out;
  for (auto it = episode.rbegin(); it != episode.rend() && out.size() < n; ++it) {
    if (it->step % 10 == 0 || out.empty()) out.push_back(*it);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------------------------
// identification

std::vector<IdentificationSample> pushing_samples(const std::vector<EpisodeStep>& episode,
                                                  const std::string& label, double gravity) {
  (void)gravity;
  std::vector<IdentificationSample> out;
  for (std::size_t k = 1; k < episode.size(); ++k) {
    const EpisodeStep& prev = episode[k - 1];
    const EpisodeStep& cur = episode[k];
    if (prev.attempt != cur.attempt || cur.step != prev.step + 1) continue;
    const int i = cur.state.index_of(label);
    if (i < 0) continue;
    const BodyState& b0 = prev.state.objects[static_cast<std::size_t>(i)];
    const BodyState& b1 = cur.state.objects[static_cast<std::size_t>(i)];
    if (b1.attached || b0.attached) continue;
    if (std::abs(b1.pose.theta) > 0.05 || std::abs(b1.velocity.y()) > 0.02) continue;
    if (std::abs(b1.velocity.x()) < 0.01 || std::abs(b0.velocity.x()) < 0.01) continue;
    if (b1.velocity.x() * b0.velocity.x() <= 0.0) continue;
    bool clean = true;
    double finger_fn = 0.0;
    for (const auto& c : cur.state.contacts) {
      if (c.object != i) continue;
      if (c.kind == ContactKind::wall) clean = false;
      if (c.kind == ContactKind::finger) finger_fn += c.normal_force;
    }
    if (!clean || finger_fn < kContactForceFloor) continue;
    const double dt = cur.state.time - prev.state.time;
    if (!(dt > 0.0)) continue;
    // the model assumes the support carries m*g, so skip pushes with a vertical component
    const Vec2 f = finger_force_vector(cur.state, i);
    if (std::abs(f.y()) > 0.15 * std::abs(f.x())) continue;
    out.push_back({f.x(), (b1.velocity.x() - b0.velocity.x()) / dt,
                   b1.velocity.x() > 0.0 ? 1.0 : -1.0});
  }
  return out;
}

double identification_residual(const std::vector<IdentificationSample>& samples,
                               const ObjectBelief& b, double g) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double err = 0.0, ref = 0.0;
  for (const auto& s : samples) {
    const double pred = b.mass * s.accel + b.friction * b.mass * g * s.sign;
    err += (s.force - pred) * (s.force - pred);
    ref += s.force * s.force;
  }
  return std::sqrt(err / std::max(ref, 1e-12));
}

Identification identify_params(const std::vector<IdentificationSample>& samples,
                               const ObjectBelief& current, double g) {
  Identification out;
  out.samples = samples.size();
  if (samples.size() < kMinIdentificationSamples) {
    out.diagnostic = "only " + std::to_string(samples.size()) + " pushing samples (need " +
                     std::to_string(kMinIdentificationSamples) + ")";
    return out;
  }
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixX2d X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& s = samples[static_cast<std::size_t>(k)];
    X(k, 0) = s.accel;
    X(k, 1) = g * s.sign;
    y(k) = s.force;
  }
  // acceleration excitation relative to the friction column decides identifiability
  const Eigen::VectorXd a = X.col(0);
  const double a_spread = std::sqrt((a.array() - a.mean()).square().mean());
  double m = current.mass;
  double c = 0.0;
  if (a_spread < 0.05) {
    out.degenerate = true;
    c = (X.col(1).array() * (y - m * a).array()).sum() / X.col(1).squaredNorm();
  } else {
    const Eigen::Vector2d theta = X.colPivHouseholderQr().solve(y);
    m = theta(0);
    c = theta(1);
  }
  if (!(m > 0.0) || !(c > 0.0) || !std::isfinite(m) || !std::isfinite(c)) {
    out.diagnostic = "least squares gave non-physical values (m=" + std::to_string(m) +
                     ", mu*m=" + std::to_string(c) + ")";
    return out;
  }
  out.ok = true;
  out.mass = m;
  out.friction = c / m;
  const Eigen::VectorXd r = y - X * Eigen::Vector2d{m, c};
  out.residual = r.norm() / std::max(y.norm(), 1e-12);
  out.diagnostic = out.degenerate ? "no acceleration excitation; mass held, mu*m fitted"
                                  : "two-parameter fit";
  return out;
}

// ---------------------------------------------------------------------------------------------
// templates

namespace {

CostTerm term(TermKind kind, double w, std::string object = {}) {
  CostTerm t;
  t.kind = kind;
  t.weight = w;
  t.object = std::move(object);
  return t;
}

CostTerm effort(double w) {
  CostTerm t = term(TermKind::control_effort, w);
  t.scale = 0.05;
  return t;
}

CostTerm attractor(const std::string& label, Vec2 point, double w, double scale) {
  CostTerm t = term(TermKind::attractor, w, label);
  t.point = point;
  t.scale = scale;
  return t;
}

CostTerm angle(TermKind kind, const std::string& label, double ref, double w) {
  CostTerm t = term(kind, w, label);
  t.reference = ref;
  return t;
}

Condition cond(Metric m, std::string a, Comparator cmp, double threshold, std::string b = {}) {
  Condition c;
  c.metric = m;
  c.a = std::move(a);
  c.b = std::move(b);
  c.cmp = cmp;
  c.threshold = threshold;
  return c;
}

ContactRegion region(Vec2 center, Vec2 normal, double extent, int k = 16) {
  return {center, normal.normalized(), extent, k};
}

}  // namespace

CostSpec task_spec(const TaskBrief& task, const WorldBelief& belief) {
  const ObjectBelief& obj = belief.at(task.target);
  const std::string& L = task.target;
  const double rf = task.finger_radius;
  CostSpec spec;
  if (task.id == "push_const_force") {
    CostTerm band = term(TermKind::force_band, 1.0, L);
    band.lo = task.force_lo;
    band.hi = task.force_hi;
    Stage s;
    s.terms = {band, angle(TermKind::rotation_drift, L, 0.0, 5.0),
               attractor(L, {-obj.half_extents.x() - rf, -0.4 * obj.half_extents.y()}, 0.5, 0.1),
               effort(0.1)};
    spec.stages = {s};
  } else if (task.id == "push_pick_board") {
    CostTerm progress = term(TermKind::overhang_progress, 5.0, L);
    progress.reference = 0.08;
    Stage push;
    push.terms = {progress, angle(TermKind::rotation_drift, L, 0.0, 5.0),
                  attractor(L, {-obj.half_extents.x() - rf, 0.0}, 0.5, 0.03), effort(0.1),
                  term(TermKind::step_penalty, 10.0)};
    push.transition = StagePredicate{{cond(Metric::overhang_of, L, Comparator::gt, 0.06),
                                      cond(Metric::speed_of, L, Comparator::lt, 0.01)}};
    Stage pick;
    const Vec2 handle = obj.handle.value_or(Vec2{0.0, obj.half_extents.y()});
    pick.terms = {attractor(L, handle + Vec2{0.0, rf}, 2.0, 0.12), progress,
                  angle(TermKind::rotation_drift, L, 0.0, 5.0), effort(0.1)};
    spec.stages = {push, pick};
  } else if (task.id == "flip_box" || task.id == "flip_wall") {
    Stage s;
    s.terms = {angle(TermKind::orientation_error, L, task.flip_angle, 5.0),
               term(TermKind::contact_indicator, 1.0, L), effort(0.1)};
    spec.stages = {s};
    spec.terminal_terms = {angle(TermKind::orientation_error, L, task.flip_angle, 5.0)};
  } else if (task.id == "pick_box" || task.id == "pick_clutter_2d") {
    const Vec2 handle = obj.handle.value_or(Vec2{0.0, obj.half_extents.y()});
    Stage reach;
    reach.terms = {attractor(L, handle + Vec2{0.0, rf}, 5.0, 0.05), effort(0.1)};
    reach.transition =
        StagePredicate{{cond(Metric::distance, "finger", Comparator::lt, 0.015, L + ".handle"),
                        cond(Metric::speed_of, L, Comparator::lt, 0.01)}};
    CostTerm carry = term(TermKind::distance_to_target, 5.0, L);
    carry.target = task.goal;
    carry.scale = 0.05;
    Stage move;
    move.terms = {carry, effort(0.1)};
    spec.stages = {reach, move};
  } else {
    throw ParameterDomainError("no template for task '" + task.id + "'");
  }
  return spec;
}

RegionMap task_regions(const TaskBrief& task, const WorldBelief& belief) {
  const ObjectBelief& obj = belief.at(task.target);
  const Vec2 h = obj.half_extents;
  RegionMap out;
  if (task.id == "push_const_force") {
    out[task.target] = {region({-h.x(), -0.4 * h.y()}, {-1, 0}, 0.3)};
  } else if (task.id == "push_pick_board") {
    out[task.target] = {region({-h.x(), 0.0}, {-1, 0}, 0.5)};
  } else if (task.id == "flip_box" || task.id == "flip_wall") {
    // high on the face that points away from the flip direction
    const double side = task.flip_angle < 0.0 ? -1.0 : 1.0;
    out[task.target] = {region({side * h.x(), 0.8 * h.y()}, {side, 0}, 0.15)};
  } else {
    const Vec2 handle = obj.handle.value_or(Vec2{0.0, h.y()});
    out[task.target] = {region(handle, {0, 1}, 0.3)};
  }
  return out;
}

CostSpec relax_transition(const CostSpec& spec, std::size_t stage) {
  CostSpec out = spec;
  if (stage >= out.stages.size() || !out.stages[stage].transition) return out;
  for (auto& c : out.stages[stage].transition->all) {
    const bool greater = c.cmp == Comparator::gt || c.cmp == Comparator::ge;
    c.threshold *= greater ? 0.8 : 1.2;
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// heuristic strategist

StrategistResponse HeuristicStrategist::formulate(const StrategistRequest& req) {
  StrategistResponse r;
  r.spec = task_spec(req.task, req.belief);
  r.regions = task_regions(req.task, req.belief);
  r.action = "template";
  r.explanation = "template plan for " + req.task.id;
  return r;
}

StrategistResponse HeuristicStrategist::refine_plan(const StrategistRequest& req) {
  StrategistResponse r;
  if (!req.failing_spec) {
    r.explanation = "no failing spec supplied; nothing to refine";
    r.action = "none";
    return r;
  }
  const CostSpec& spec = *req.failing_spec;
  const std::size_t last = spec.stages.size() - 1;
  const std::size_t stuck = std::min(req.stages_reached, last);
  const bool relaxed_last =
      !req.previous_actions.empty() && req.previous_actions.back() == "relax_threshold";

  if (stuck < last && !relaxed_last && spec.stages[stuck].transition) {
    r.spec = relax_transition(spec, stuck);
    r.action = "relax_threshold";
    r.explanation = "stage " + std::to_string(stuck + 1) +
                    " never reached; relaxed the transition thresholds by 20%";
    return r;
  }

  // double the term with the largest positive contribution over the tail
  const CostEvaluator eval(spec, req.belief);
  const std::vector<EpisodeStep> tail = episode_tail(req.episode);
  const auto& terms = spec.stages[stuck].terms;
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    double sum = 0.0;
    for (const auto& st : tail) sum += terms[k].weight * eval.term_value(terms[k], st.state, st.nu);
    const double mean = tail.empty() ? 0.0 : sum / static_cast<double>(tail.size());
    ranked.emplace_back(mean, k);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  CostSpec next = spec;
  for (const auto& [contribution, k] : ranked) {
    CostTerm& t = next.stages[stuck].terms[k];
    const double w = std::clamp(2.0 * t.weight, 0.1, 10.0);
    if (w == t.weight) continue;
    t.weight = w;
    r.spec = next;
    r.action = "scale_weight";
    r.explanation = std::string("doubled the weight of ") + to_string(t.kind) + " in stage " +
                    std::to_string(stuck + 1) + " (largest residual contribution " +
                    std::to_string(contribution) + ")";
    return r;
  }
  r.spec = spec;
  r.action = "none";
  r.explanation = "every weight already at its clamp; plan unchanged";
  return r;
}

StrategistResponse HeuristicStrategist::refine_params(const StrategistRequest& req) {
  StrategistResponse r;
  r.action = "identify";
  const double g = req.belief.fixtures.gravity;
  const ObjectBelief& cur = req.belief.at(req.task.target);
  const auto samples = pushing_samples(req.episode, req.task.target, g);
  const Identification id = identify_params(samples, cur, g);
  if (!id.ok) {
    r.explanation = "no parameter update: " + id.diagnostic;
    r.action = "none";
    return r;
  }
  ParamMap update;
  update[req.task.target] = ParamUpdate{id.mass, id.friction};
  r.params = std::move(update);
  r.explanation = req.task.target + ": mass " + std::to_string(cur.mass) + " -> " +
                  std::to_string(id.mass) + " kg, friction " + std::to_string(cur.friction) +
                  " -> " + std::to_string(id.friction) + " (" + id.diagnostic + ", " +
                  std::to_string(id.samples) + " samples)";
  return r;
}

}  // namespace coral
