#include "coral/cost_engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

namespace coral {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 11> kTermNames{
    "distance_to_target", "contact_indicator", "control_effort", "orientation_error",
    "attractor",          "overhang_progress", "lift_reward",    "force_band",
    "lateral_drift",      "rotation_drift",    "step_penalty"};

constexpr std::array<const char*, 5> kMetricNames{"overhang_of", "speed_of", "distance",
                                                  "orientation_of", "contact"};
constexpr std::array<const char*, 4> kComparatorNames{"<", ">", "<=", ">="};

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

bool uses_object(TermKind k) {
  switch (k) {
    case TermKind::contact_indicator:
    case TermKind::orientation_error:
    case TermKind::overhang_progress:
    case TermKind::lift_reward:
    case TermKind::force_band:
    case TermKind::lateral_drift:
    case TermKind::rotation_drift:
      return true;
    default:
      return false;
  }
}

bool is_reward(TermKind k) {
  return k == TermKind::overhang_progress || k == TermKind::lift_reward;
}

bool is_fixture(const std::string& name) {
  return name == "ground" || name == "table_edge" || name == "wall";
}

std::string base_label(const std::string& name) {
  const auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

const char* to_string(TermKind kind) { return kTermNames[static_cast<std::size_t>(kind)]; }

std::optional<TermKind> term_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kTermNames.size(); ++i) {
    if (name == kTermNames[i]) return static_cast<TermKind>(i);
  }
  return std::nullopt;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

CostEvaluator::CostEvaluator(CostSpec spec, const WorldBelief& world)
    : spec_(std::move(spec)), world_(world) {
  std::vector<std::string> v = validate(spec_, &world_);
  if (!v.empty()) throw StructuralError(ValidationError(v).what());
}

CostEvaluator::Resolved CostEvaluator::resolve(const std::string& label) const {
  // Object order in SimState follows the (sorted) map order of the world.
  int i = 0;
  for (const auto& [name, geo] : world_.objects) {
    if (name == label) return {i, &geo};
    ++i;
  }
  return {};
}

Vec2 CostEvaluator::point_of(const std::string& name, const SimState& s) const {
  if (name == "finger") return s.finger.position;
  const std::string label = base_label(name);
  const Resolved r = resolve(label);
  const BodyState& b = s.objects[static_cast<std::size_t>(r.object)];
  if (label.size() != name.size()) return handle_world(b, *r.geometry);
  return b.pose.position();
}

double CostEvaluator::term_value(const CostTerm& t, const SimState& s, const Control& u) const {
  const double scale2 = t.scale * t.scale;
  Resolved r;
  const BodyState* b = nullptr;
  if (!t.object.empty()) {
    r = resolve(t.object);
    b = &s.objects[static_cast<std::size_t>(r.object)];
  }
  switch (t.kind) {
    case TermKind::distance_to_target: {
      const Vec2 p = b ? b->pose.position() : s.finger.position;
      return (p - t.target).squaredNorm() / scale2;
    }
    case TermKind::contact_indicator:
      return s.finger_force(r.object) < kContactForceFloor ? 1.0 : 0.0;
    case TermKind::control_effort:
      return u.squaredNorm() / scale2;
    case TermKind::orientation_error:
    case TermKind::rotation_drift:
      return std::abs(wrap_angle(b->pose.theta - t.reference));
    case TermKind::attractor: {
      const Vec2 x_des = b ? b->pose.to_world(t.point) : t.point;
      return (s.finger.position - x_des).squaredNorm() / scale2;
    }
    case TermKind::overhang_progress:
      return -clip01(overhang_of(*b, *r.geometry, world_.fixtures) / t.reference);
    case TermKind::lift_reward:
      return -std::max(0.0, b->pose.z - t.reference);
    case TermKind::force_band: {
      const double f = s.finger_force_magnitude(r.object);
      const double below = std::max(0.0, t.lo - f);
      const double above = std::max(0.0, f - t.hi);
      return below * below + above * above;
    }
    case TermKind::lateral_drift: {
      const Vec2 d = b->pose.position() - t.target;
      const Vec2 perp = d - d.dot(t.axis) * t.axis;
      return perp.norm() / t.scale;
    }
    case TermKind::step_penalty:
      return 1.0;
  }
  return 0.0;
}

double CostEvaluator::stage_cost(std::size_t stage, const SimState& s, const Control& u) const {
  double c = 0.0;
  for (const auto& t : spec_.stages[stage].terms) {
    if (t.weight != 0.0) c += t.weight * term_value(t, s, u);
  }
  return c;
}

double CostEvaluator::running(const SimState& s, const Control& u, const StageStatus& st) const {
  const std::size_t i = std::min(st.active_stage, spec_.stages.size() - 1);
  const double ci = stage_cost(i, s, u);
  if (!spec_.blending.soft || i + 1 >= spec_.stages.size()) return ci;
  const double r = sigmoid(spec_.blending.gain * (st.blend_score - spec_.blending.offset));
  return (1.0 - r) * ci + r * stage_cost(i + 1, s, u);
}

double CostEvaluator::terminal(const SimState& s) const {
  double c = 0.0;
  const Control zero = Control::Zero();
  for (const auto& t : spec_.terminal_terms) {
    if (t.weight != 0.0) c += t.weight * term_value(t, s, zero);
  }
  return c;
}

double CostEvaluator::blend_score(const SimState& s) const {
  double num = 0.0, den = 0.0;
  for (const auto& t : spec_.blending.score_terms) {
    const double raw = term_value(t, s, Control::Zero());
    const double mapped = is_reward(t.kind) ? clip01(-raw) : std::exp(-raw);
    num += t.weight * mapped;
    den += t.weight;
  }
  return den > 0.0 ? num / den : 0.0;
}

double CostEvaluator::condition_value(const Condition& c, const SimState& s) const {
  switch (c.metric) {
    case Metric::overhang_of: {
      const Resolved r = resolve(base_label(c.a));
      return overhang_of(s.objects[static_cast<std::size_t>(r.object)], *r.geometry,
                         world_.fixtures);
    }
    case Metric::speed_of:
      if (c.a == "finger") return s.finger.velocity.norm();
      return speed_of(s.objects[static_cast<std::size_t>(resolve(base_label(c.a)).object)]);
    case Metric::distance: {
      const Vec2 pb = c.b.empty() ? c.point : point_of(c.b, s);
      return (point_of(c.a, s) - pb).norm();
    }
    case Metric::orientation_of:
      return s.objects[static_cast<std::size_t>(resolve(base_label(c.a)).object)].pose.theta;
    case Metric::contact: {
      const std::string& obj = c.a == "finger" ? c.b : c.a;
      const std::string& other = c.a == "finger" ? c.a : c.b;
      const int idx = resolve(base_label(obj)).object;
      for (const auto& f : s.contacts) {
        if (f.object != idx || f.normal_force < kContactForceFloor) continue;
        if (to_string(f.kind) == other) return 1.0;
      }
      return 0.0;
    }
  }
  return 0.0;
}

bool CostEvaluator::holds(const StagePredicate& p, const SimState& s) const {
  for (const auto& c : p.all) {
    const double v = condition_value(c, s);
    bool ok = false;
    switch (c.cmp) {
      case Comparator::lt: ok = v < c.threshold; break;
      case Comparator::gt: ok = v > c.threshold; break;
      case Comparator::le: ok = v <= c.threshold; break;
      case Comparator::ge: ok = v >= c.threshold; break;
    }
    if (!ok) return false;
  }
  return true;
}

StageStatus CostEvaluator::status(const SimState& s, std::size_t current) const {
  StageStatus st;
  st.active_stage = std::min(current, spec_.stages.size() - 1);
  const auto& tr = spec_.stages[st.active_stage].transition;
  if (tr && holds(*tr, s)) {
    st.active_stage += 1;
    st.transition_fired = true;
  }
  st.blend_score = blend_score(s);
  return st;
}

double evaluate_running(const CostSpec& spec, const WorldBelief& world, const SimState& state,
                        const Control& u, const StageStatus& stage) {
  return CostEvaluator(spec, world).running(state, u, stage);
}

double evaluate_terminal(const CostSpec& spec, const WorldBelief& world, const SimState& state) {
  return CostEvaluator(spec, world).terminal(state);
}

StageStatus stage_status(const CostSpec& spec, const WorldBelief& world, const SimState& state,
                         std::size_t current) {
  return CostEvaluator(spec, world).status(state, current);
}

// ---------------------------------------------------------------------------------------------
// validation

namespace {

void check_term(const CostTerm& t, const std::string& where, const WorldBelief* world,
                std::vector<std::string>& out) {
  const std::string name = where + " (" + to_string(t.kind) + ")";
  if (!std::isfinite(t.weight) || t.weight < 0.0 || t.weight > 1000.0) {
    out.push_back(name + ": weight " + std::to_string(t.weight) + " outside [0, 1000]");
  }
  if (uses_object(t.kind) && t.object.empty()) out.push_back(name + ": requires an object label");
  if (world && !t.object.empty() && !world->contains(t.object)) {
    out.push_back(name + ": unknown object label '" + t.object + "'");
  }
  if (!(t.scale > 0.0) || !std::isfinite(t.scale)) out.push_back(name + ": scale must be > 0");
  if (t.kind == TermKind::force_band && !(t.lo <= t.hi)) {
    out.push_back(name + ": force band lo > hi");
  }
  if (t.kind == TermKind::lateral_drift && std::abs(t.axis.norm() - 1.0) > 1e-9) {
    out.push_back(name + ": axis must be unit-norm");
  }
  if (t.kind == TermKind::overhang_progress && !(t.reference > 0.0)) {
    out.push_back(name + ": reference (desired overhang) must be > 0");
  }
  if (!t.target.allFinite() || !t.point.allFinite() || !std::isfinite(t.reference)) {
    out.push_back(name + ": non-finite parameter");
  }
}

void check_point_name(const std::string& n, const std::string& where, const WorldBelief* world,
                      std::vector<std::string>& out) {
  if (n == "finger" || is_fixture(n)) return;
  if (n.empty()) {
    out.push_back(where + ": missing point name");
    return;
  }
  const std::string label = base_label(n);
  if (label.size() != n.size() && n.substr(label.size()) != ".handle") {
    out.push_back(where + ": unsupported point suffix in '" + n + "'");
  }
  if (world && !world->contains(label)) {
    out.push_back(where + ": unknown object label '" + label + "'");
  }
}

}  // namespace

std::vector<std::string> validate(const CostSpec& spec, const WorldBelief* world) {
  std::vector<std::string> out;
  if (spec.stages.empty()) out.push_back("spec has no stages");
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const Stage& st = spec.stages[i];
    const std::string where = "stages[" + std::to_string(i) + "]";
    for (std::size_t k = 0; k < st.terms.size(); ++k) {
      check_term(st.terms[k], where + ".terms[" + std::to_string(k) + "]", world, out);
    }
    if (i + 1 == spec.stages.size() && st.transition) {
      out.push_back(where + ": last stage must not have a transition");
    }
    if (st.transition) {
      if (st.transition->all.empty()) out.push_back(where + ": empty transition predicate");
      for (std::size_t k = 0; k < st.transition->all.size(); ++k) {
        const Condition& c = st.transition->all[k];
        const std::string cw = where + ".transition[" + std::to_string(k) + "]";
        if (!std::isfinite(c.threshold)) out.push_back(cw + ": threshold must be finite");
        if (c.metric == Metric::speed_of && c.a == "finger") continue;
        if (c.metric != Metric::distance && c.metric != Metric::contact && c.a == "finger") {
          out.push_back(cw + ": metric needs an object, not the finger");
          continue;
        }
        check_point_name(c.a, cw, world, out);
        if (c.metric == Metric::contact) {
          if (!(c.b == "finger" || is_fixture(c.b) || c.a == "finger")) {
            out.push_back(cw + ": contact partner must be finger/ground/table_edge/wall");
          }
          if (c.a == "finger") check_point_name(c.b, cw, world, out);
        } else if (c.metric == Metric::distance && !c.b.empty()) {
          check_point_name(c.b, cw, world, out);
        }
      }
    }
  }
  for (std::size_t k = 0; k < spec.terminal_terms.size(); ++k) {
    check_term(spec.terminal_terms[k], "terminal_terms[" + std::to_string(k) + "]", world, out);
  }
  for (std::size_t k = 0; k < spec.blending.score_terms.size(); ++k) {
    check_term(spec.blending.score_terms[k], "blending.score_terms[" + std::to_string(k) + "]",
               world, out);
  }
  if (!std::isfinite(spec.blending.gain) || !std::isfinite(spec.blending.offset)) {
    out.push_back("blending: gain/offset must be finite");
  }
  return out;
}

std::vector<std::string> weight_warnings(const CostSpec& spec) {
  std::vector<std::string> out;
  double wmin = std::numeric_limits<double>::infinity();
  double wmax = 0.0;
  auto visit = [&](const CostTerm& t, const std::string& where) {
    if (t.weight == 0.0) return;
    if (t.weight < 0.1 || t.weight > 10.0) {
      out.push_back(where + " (" + to_string(t.kind) + "): weight " + std::to_string(t.weight) +
                    " outside [0.1, 10]; consider normalizing");
    }
    wmin = std::min(wmin, t.weight);
    wmax = std::max(wmax, t.weight);
  };
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    for (std::size_t k = 0; k < spec.stages[i].terms.size(); ++k) {
      visit(spec.stages[i].terms[k],
            "stages[" + std::to_string(i) + "].terms[" + std::to_string(k) + "]");
    }
  }
  for (std::size_t k = 0; k < spec.terminal_terms.size(); ++k) {
    visit(spec.terminal_terms[k], "terminal_terms[" + std::to_string(k) + "]");
  }
  if (wmax > 0.0 && wmax / wmin >= 1000.0) {
    out.push_back("imbalanced weights: max/min ratio " + std::to_string(wmax / wmin) +
                  " >= 1000:1");
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// serialization

json to_json(const CostTerm& t) {
  json j = {{"kind", to_string(t.kind)}, {"weight", t.weight}};
  if (!t.object.empty()) j["object"] = t.object;
  switch (t.kind) {
    case TermKind::distance_to_target:
      j["target"] = {t.target.x(), t.target.y()};
      break;
    case TermKind::attractor:
      j["point"] = {t.point.x(), t.point.y()};
      break;
    case TermKind::orientation_error:
    case TermKind::rotation_drift:
    case TermKind::overhang_progress:
    case TermKind::lift_reward:
      j["reference"] = t.reference;
      break;
    case TermKind::force_band:
      j["band"] = {t.lo, t.hi};
      break;
    case TermKind::lateral_drift:
      j["target"] = {t.target.x(), t.target.y()};
      j["axis"] = {t.axis.x(), t.axis.y()};
      break;
    default:
      break;
  }
  if (t.scale != 1.0) j["scale"] = t.scale;
  return j;
}

namespace {

json to_json(const Condition& c) {
  json j = {{"metric", kMetricNames[static_cast<std::size_t>(c.metric)]},
            {"a", c.a},
            {"cmp", kComparatorNames[static_cast<std::size_t>(c.cmp)]},
            {"threshold", c.threshold}};
  if (!c.b.empty()) j["b"] = c.b;
  if (c.metric == Metric::distance && c.b.empty()) j["point"] = {c.point.x(), c.point.y()};
  return j;
}

Vec2 vec2(const json& j, const char* key) {
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw json::type_error::create(302, std::string(key) + " must be [x, z]", &a);
  return {a[0].get<double>(), a[1].get<double>()};
}

CostTerm term_from_json(const json& j, const std::string& where, std::vector<std::string>& errs) {
  CostTerm t;
  const std::string kind = j.at("kind").get<std::string>();
  auto k = term_kind_from_string(kind);
  if (!k) {
    errs.push_back(where + ": unknown term kind '" + kind + "'");
    return t;
  }
  t.kind = *k;
  t.weight = j.at("weight").get<double>();
  t.object = j.value("object", std::string{});
  if (j.contains("target")) t.target = vec2(j, "target");
  if (j.contains("point")) t.point = vec2(j, "point");
  if (j.contains("axis")) t.axis = vec2(j, "axis");
  t.reference = j.value("reference", 0.0);
  if (j.contains("band")) {
    const Vec2 band = vec2(j, "band");
    t.lo = band.x();
    t.hi = band.y();
  }
  t.scale = j.value("scale", 1.0);
  if (t.kind == TermKind::distance_to_target && !j.contains("target")) {
    errs.push_back(where + ": distance_to_target requires 'target'");
  }
  if (t.kind == TermKind::force_band && !j.contains("band")) {
    errs.push_back(where + ": force_band requires 'band'");
  }
  if (t.kind == TermKind::attractor && !j.contains("point")) {
    errs.push_back(where + ": attractor requires 'point'");
  }
  return t;
}

Condition condition_from_json(const json& j, const std::string& where,
                              std::vector<std::string>& errs) {
  Condition c;
  const std::string metric = j.at("metric").get<std::string>();
  auto mi = std::find(kMetricNames.begin(), kMetricNames.end(), metric);
  if (mi == kMetricNames.end()) {
    errs.push_back(where + ": unknown metric '" + metric + "'");
  } else {
    c.metric = static_cast<Metric>(mi - kMetricNames.begin());
  }
  const std::string cmp = j.at("cmp").get<std::string>();
  auto ci = std::find(kComparatorNames.begin(), kComparatorNames.end(), cmp);
  if (ci == kComparatorNames.end()) {
    errs.push_back(where + ": unknown comparator '" + cmp + "'");
  } else {
    c.cmp = static_cast<Comparator>(ci - kComparatorNames.begin());
  }
  c.a = j.at("a").get<std::string>();
  c.b = j.value("b", std::string{});
  if (j.contains("point")) c.point = vec2(j, "point");
  c.threshold = j.at("threshold").get<double>();
  return c;
}

std::vector<CostTerm> terms_from_json(const json& arr, const std::string& where,
                                      std::vector<std::string>& errs) {
  std::vector<CostTerm> out;
  if (!arr.is_array()) {
    errs.push_back(where + " must be an array");
    return out;
  }
  for (std::size_t k = 0; k < arr.size(); ++k) {
    out.push_back(term_from_json(arr[k], where + "[" + std::to_string(k) + "]", errs));
  }
  return out;
}

}  // namespace

json to_json(const CostSpec& spec) {
  json stages = json::array();
  for (const auto& st : spec.stages) {
    json terms = json::array();
    for (const auto& t : st.terms) terms.push_back(to_json(t));
    json s = {{"terms", std::move(terms)}};
    if (st.transition) {
      json all = json::array();
      for (const auto& c : st.transition->all) all.push_back(to_json(c));
      s["transition"] = {{"all", std::move(all)}};
    }
    stages.push_back(std::move(s));
  }
  json blending;
  if (spec.blending.soft) {
    json score = json::array();
    for (const auto& t : spec.blending.score_terms) score.push_back(to_json(t));
    blending = {{"mode", "soft_switch"},
                {"score_terms", std::move(score)},
                {"gain", spec.blending.gain},
                {"offset", spec.blending.offset}};
  } else {
    blending = {{"mode", "hard_switch"}};
  }
  json terminal = json::array();
  for (const auto& t : spec.terminal_terms) terminal.push_back(to_json(t));
  return {{"stages", std::move(stages)},
          {"blending", std::move(blending)},
          {"terminal_terms", std::move(terminal)}};
}

SpecLoad spec_from_json(const json& j, const WorldBelief* world) {
  SpecLoad out;
  std::vector<std::string> errs;
  try {
    if (!j.is_object()) throw ParseError("cost spec must be a JSON object");
    const json& stages = j.at("stages");
    if (!stages.is_array()) throw ParseError("'stages' must be an array");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string where = "stages[" + std::to_string(i) + "]";
      Stage st;
      st.terms = terms_from_json(stages[i].at("terms"), where + ".terms", errs);
      if (stages[i].contains("transition") && !stages[i]["transition"].is_null()) {
        const json& tr = stages[i]["transition"];
        const json& all = tr.contains("all") ? tr.at("all") : json::array({tr});
        StagePredicate p;
        for (std::size_t k = 0; k < all.size(); ++k) {
          p.all.push_back(condition_from_json(
              all[k], where + ".transition[" + std::to_string(k) + "]", errs));
        }
        st.transition = std::move(p);
      }
      out.spec.stages.push_back(std::move(st));
    }
    if (j.contains("blending")) {
      const json& b = j.at("blending");
      const std::string mode = b.value("mode", std::string{"hard_switch"});
      if (mode == "soft_switch") {
        out.spec.blending.soft = true;
        if (b.contains("score_terms")) {
          out.spec.blending.score_terms =
              terms_from_json(b.at("score_terms"), "blending.score_terms", errs);
        }
        out.spec.blending.gain = b.value("gain", 12.0);
        out.spec.blending.offset = b.value("offset", 0.55);
      } else if (mode != "hard_switch") {
        errs.push_back("blending: unknown mode '" + mode + "'");
      }
    }
    if (j.contains("terminal_terms")) {
      out.spec.terminal_terms = terms_from_json(j.at("terminal_terms"), "terminal_terms", errs);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("cost spec: ") + e.what());
  }
  if (errs.empty()) errs = validate(out.spec, world);
  if (!errs.empty()) throw ValidationError(std::move(errs));
  out.warnings = weight_warnings(out.spec);
  return out;
}

SpecLoad load_spec(std::string_view document, const WorldBelief* world) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError("cost spec: malformed JSON at byte " + std::to_string(e.byte) + ": " +
                     e.what());
  }
  return spec_from_json(j, world);
}

std::string dump_spec(const CostSpec& spec) { return to_json(spec).dump(); }

std::string spec_digest(const CostSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump_spec(spec)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace coral
