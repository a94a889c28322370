#include "coral/remote_strategist.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "coral/tasks.hpp"

namespace coral {

using nlohmann::json;

std::string fill_template(std::string tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    for (std::size_t at = tmpl.find(token); at != std::string::npos;
         at = tmpl.find(token, at + value.size())) {
      tmpl.replace(at, token.size(), value);
    }
  }
  return tmpl;
}

namespace {

// End (one past) of the JSON value opening at `open`, tracking strings; npos if unbalanced.
std::size_t balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') ++depth;
    else if ((c == '}' || c == ']') && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

std::optional<json> try_parse(std::string_view s) {
  json j = json::parse(s, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::optional<json> extract_json(std::string_view reply) {
  // fenced blocks first: ```lang\n ... ```
  for (std::size_t open = reply.find("```"); open != std::string_view::npos;) {
    const std::size_t body = reply.find('\n', open + 3);
    if (body == std::string_view::npos) break;
    const std::size_t close = reply.find("```", body);
    if (close == std::string_view::npos) break;
    if (auto j = try_parse(reply.substr(body + 1, close - body - 1)); j && j->is_structured()) return j;
    open = reply.find("```", close + 3);
  }
  for (std::size_t i = reply.find_first_of("{["); i != std::string_view::npos;
       i = reply.find_first_of("{[", i + 1)) {
    const std::size_t end = balanced_end(reply, i);
    if (end == std::string_view::npos) continue;
    if (auto j = try_parse(reply.substr(i, end - i))) return j;
  }
  return std::nullopt;
}

std::pair<std::string, std::string> split_explanation(std::string_view reply) {
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    const std::size_t eol = std::min(reply.find('\n', pos), reply.size());
    if (trim(reply.substr(pos, eol - pos)) == "---") {
      return {std::string(reply.substr(0, pos)),
              trim(eol < reply.size() ? reply.substr(eol + 1) : std::string_view{})};
    }
    pos = eol + 1;
  }
  // no separator line: take the first inline "---" outside the JSON, as a plain split would
  const auto j = reply.find("---");
  if (j == std::string_view::npos) return {std::string(reply), {}};
  return {std::string(reply.substr(0, j)), trim(reply.substr(j + 3))};
}

namespace {

std::optional<double> number_field(const json& o, std::initializer_list<const char*> keys,
                                   const std::string& where, std::vector<std::string>& errs) {
  for (const char* k : keys) {
    if (!o.contains(k)) continue;
    const json& v = o.at(k);
    if (v.is_number() && std::isfinite(v.get<double>())) return v.get<double>();
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      char* end = nullptr;
      const double d = std::strtod(s.c_str(), &end);
      if (!s.empty() && end && *end == '\0' && std::isfinite(d)) return d;
    }
    errs.push_back(where + "." + k + " is not a number (" + v.dump() + ")");
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

ParamMap params_from_reply(const json& j, const WorldBelief& belief) {
  std::vector<std::string> errs;
  ParamMap out;
  auto take = [&](const std::string& label, const json& o, const std::string& where,
                  std::initializer_list<const char*> mass_keys,
                  std::initializer_list<const char*> friction_keys) {
    if (!belief.contains(label)) {
      errs.push_back(where + ": unknown object label '" + label + "'");
      return;
    }
    if (!o.is_object()) {
      errs.push_back(where + " is not an object");
      return;
    }
    ParamUpdate u;
    u.mass = number_field(o, mass_keys, where, errs);
    u.friction = number_field(o, friction_keys, where, errs);
    if (!u.mass && !u.friction) {
      errs.push_back(where + " carries neither mass nor friction");
      return;
    }
    out[label] = u;
  };

  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string where = "[" + std::to_string(i) + "]";
      const json& e = j[i];
      if (!e.is_object() || !e.contains("label") || !e["label"].is_string()) {
        errs.push_back(where + " needs a string 'label'");
        continue;
      }
      take(e["label"].get<std::string>(), e, where, {"mass", "mass_kg"},
           {"friction", "friction_coeff", "friction_coef"});
    }
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      take(it.key(), it.value(), it.key(), {"mass_kg", "mass"},
           {"friction_coeff", "friction", "friction_coef"});
    }
  } else {
    errs.push_back("expected a JSON object or array of parameters");
  }
  if (out.empty() && errs.empty()) errs.push_back("no parameters in reply");
  if (!errs.empty()) throw ValidationError(std::move(errs));
  return out;
}

RemoteConfig RemoteConfig::from_env() {
  RemoteConfig c;
  auto get = [](const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string{};
  };
  c.base_url = get("CORAL_LLM_BASE_URL");
  c.api_key = get("CORAL_LLM_API_KEY");
  c.model = get("CORAL_LLM_MODEL");
  return c;
}

HttpChatClient::HttpChatClient(RemoteConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) {
    throw ParameterDomainError("remote strategist needs CORAL_LLM_BASE_URL");
  }
  if (!(cfg_.timeout_s > 0.0)) throw ParameterDomainError("remote timeout must be > 0");
}

std::optional<std::string> HttpChatClient::complete(const std::string& prompt, std::string& error) {
  // split scheme://host[:port] from any path prefix
  std::string url = cfg_.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  const std::size_t scheme = url.find("://");
  const std::size_t slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const std::string host = slash == std::string::npos ? url : url.substr(0, slash);
  const std::string prefix = slash == std::string::npos ? "" : url.substr(slash);

  try {
    httplib::Client cli(host);
    const auto secs = static_cast<time_t>(std::ceil(cfg_.timeout_s));
    cli.set_connection_timeout(secs);
    cli.set_read_timeout(secs);
    cli.set_write_timeout(secs);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    const json body = {{"model", cfg_.model},
                       {"temperature", 0},
                       {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
    auto res = cli.Post(prefix + "/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
      error = "request failed: " + httplib::to_string(res.error());
      return std::nullopt;
    }
    if (res->status != 200) {
      error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      return std::nullopt;
    }
    const json r = json::parse(res->body, nullptr, false);
    if (r.is_discarded() || !r.contains("choices") || r["choices"].empty() ||
        !r["choices"][0].contains("message") || !r["choices"][0]["message"].contains("content") ||
        !r["choices"][0]["message"]["content"].is_string()) {
      error = "malformed chat-completion response";
      return std::nullopt;
    }
    return r["choices"][0]["message"]["content"].get<std::string>();
  } catch (const std::exception& e) {
    error = std::string("request failed: ") + e.what();
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------------------------

namespace {

json params_shape(const WorldBelief& belief, bool unknown) {
  json j = objects_to_json(belief);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (unknown) {
      it.value()["mass_kg"] = "?";
      it.value()["friction_coeff"] = "?";
    }
  }
  return j;
}

json physical_params(const WorldBelief& belief) {
  json j = json::object();
  for (const auto& [label, o] : belief.objects) {
    j[label] = {{"mass_kg", o.mass}, {"friction_coeff", o.friction}};
  }
  return j;
}

json pose_state(const TaskBrief& task, const WorldBelief& belief) {
  json objects = json::object();
  for (const auto& [label, o] : belief.objects) {
    json e = {{"pose_estimated", {o.pose.x, o.pose.z, o.pose.theta}},
              {"half_extents", {o.half_extents.x(), o.half_extents.y()}}};
    if (o.handle) e["handle"] = {o.handle->x(), o.handle->y()};
    objects[label] = std::move(e);
  }
  json fixtures = {{"table_edge_x", belief.fixtures.table_edge_x},
                   {"wall_x", belief.fixtures.wall_x},
                   {"wall_height", belief.fixtures.wall_height}};
  json params = {{"target", task.target}, {"finger_radius", task.finger_radius}};
  if (task.id == "push_const_force") params["force_band"] = {task.force_lo, task.force_hi};
  if (task.id == "flip_box" || task.id == "flip_wall") params["flip_angle"] = task.flip_angle;
  if (task.id == "pick_box" || task.id == "pick_clutter_2d") {
    params["goal"] = {task.goal.x(), task.goal.y()};
  }
  return {{"objects", objects}, {"fixtures", fixtures}, {"task_params", params}};
}

json history_json(const StrategistRequest& req) {
  json out = json::array();
  for (const EpisodeStep& st : episode_tail(req.episode)) {
    json pos = json::object();
    for (std::size_t i = 0; i < st.state.objects.size(); ++i) {
      const Pose2& p = st.state.objects[i].pose;
      pos[st.state.labels[i]] = {p.x, p.z, p.theta};
    }
    json force = json::object();
    for (std::size_t i = 0; i < st.state.objects.size(); ++i) {
      const Vec2 f = finger_force_vector(st.state, static_cast<int>(i));
      force[st.state.labels[i]] = {f.x(), f.y()};
    }
    out.push_back({{"t", st.state.time},
                   {"object_pos", std::move(pos)},
                   {"finger", {st.state.finger.position.x(), st.state.finger.position.y()}},
                   {"u", {st.nu.x(), st.nu.y()}},
                   {"finger_force", std::move(force)},
                   {"stage", st.stage},
                   {"cost", st.cost}});
  }
  return out;
}

std::string example_spec() {
  const Scene s = default_scene("pick_box");
  TaskBrief b;
  b.id = s.task;
  b.text = s.task_text;
  b.target = s.target;
  b.goal = s.goal;
  return dump_spec(task_spec(b, s.truth));
}

std::vector<std::string> check_spec(const json& j, const WorldBelief& belief, CostSpec& out,
                                    std::vector<std::string>& warnings) {
  try {
    SpecLoad load = spec_from_json(j, &belief);
    CostEvaluator probe(load.spec, belief);
    out = std::move(load.spec);
    warnings = std::move(load.warnings);
    return {};
  } catch (const ValidationError& e) {
    return e.violations();
  } catch (const std::exception& e) {
    return {e.what()};
  }
}

}  // namespace

RemoteStrategist::RemoteStrategist(std::unique_ptr<ChatClient> client) : client_(std::move(client)) {
  if (!client_) throw ParameterDomainError("remote strategist needs a chat client");
}

template <typename Check>
RemoteStrategist::Reply RemoteStrategist::ask(const std::string& what, const std::string& prompt,
                                              Check check, std::vector<std::string>& events,
                                              bool with_explanation) {
  std::string message = prompt;
  for (int strike = 0; strike < 2; ++strike) {
    sent_.push_back(message);
    std::string error;
    const std::optional<std::string> text = client_->complete(message, error);
    if (!text) {
      events.push_back("remote strategist: " + what + " " + error + "; falling back to heuristic");
      return {};
    }
    const std::string body = with_explanation ? split_explanation(*text).first : *text;
    std::vector<std::string> diags;
    std::optional<json> j = extract_json(body);
    if (!j) diags.push_back("no JSON object or array found in the reply");
    else diags = check(*j);
    if (diags.empty()) return {std::move(j), *text};

    std::string joined;
    for (const auto& d : diags) joined += (joined.empty() ? "" : "; ") + d;
    if (strike == 0) {
      events.push_back("remote strategist: " + what + " reply rejected (" + joined + "); retrying");
      message = prompt + "\n\nYour previous reply was rejected:\n";
      for (const auto& d : diags) message += "- " + d + "\n";
      message += "Reply again, following the required format exactly.";
    } else {
      events.push_back("remote strategist: " + what + " rejected twice (" + joined +
                       "); falling back to heuristic");
    }
  }
  return {};
}

StrategistResponse RemoteStrategist::formulate(const StrategistRequest& req) {
  StrategistResponse r;
  WorldBelief belief = req.belief;

  // parameter priors
  const std::string p_prompt =
      fill_template(std::string(prompt_asset("param_estimate")),
                    {{"TASK_DESCRIPTION", req.task.text},
                     {"OBJECT_DATA", params_shape(belief, true).dump(2)}});
  ParamMap params;
  const Reply pr = ask("param_estimate", p_prompt,
                       [&](const json& j) -> std::vector<std::string> {
                         try {
                           params = params_from_reply(j, belief);
                           return {};
                         } catch (const ValidationError& e) {
                           return e.violations();
                         }
                       },
                       r.events);
  if (pr.value) {
    RefinementResult applied = apply_refinement(belief, params, 0);
    belief = std::move(applied.belief);
    for (auto& w : applied.warnings) r.events.push_back("remote strategist: " + w);
    r.params = params;
  }

  std::optional<StrategistResponse> heuristic;
  auto fallback = [&]() -> const StrategistResponse& {
    if (!heuristic) {
      StrategistRequest h = req;
      h.belief = belief;
      heuristic = fallback_.formulate(h);
    }
    return *heuristic;
  };

  // cost specification
  const std::string c_prompt = fill_template(
      std::string(prompt_asset("cost_spec")),
      {{"TASK_DESCRIPTION", req.task.text},
       {"TRACKED_POSES_JSON", pose_state(req.task, belief).dump(2)},
       {"ESTIMATED_PARAMS_JSON", physical_params(belief).dump(2)},
       {"EXAMPLE_SPEC", example_spec()}});
  CostSpec spec;
  std::vector<std::string> warnings;
  const Reply cr = ask("cost_spec", c_prompt,
                       [&](const json& j) { return check_spec(j, belief, spec, warnings); },
                       r.events);
  if (cr.value) {
    r.spec = spec;
    for (auto& w : warnings) r.events.push_back("remote strategist: cost spec: " + w);
  } else {
    r.spec = fallback().spec;
  }

  // contact regions
  json objects = json::object();
  const json poses = pose_state(req.task, belief);
  for (const auto& [label, o] : belief.objects) {
    objects[label] = {poses["objects"][label], physical_params(belief)[label]};
  }
  const std::string g_prompt =
      fill_template(std::string(prompt_asset("regions")),
                    {{"TASK_DESCRIPTION", req.task.text},
                     {"OBJECT_DATA", objects.dump(2)},
                     {"FINGER_RADIUS", std::to_string(req.task.finger_radius)}});
  RegionMap regions;
  const Reply gr = ask("regions", g_prompt,
                       [&](const json& j) -> std::vector<std::string> {
                         try {
                           regions = regions_from_json(j, &belief);
                           return {};
                         } catch (const ValidationError& e) {
                           return e.violations();
                         } catch (const std::exception& e) {
                           return {e.what()};
                         }
                       },
                       r.events);
  r.regions = gr.value ? regions : fallback().regions;

  r.action = cr.value ? "remote" : "template";
  r.explanation = cr.value ? "remote plan for " + req.task.id
                           : "template plan for " + req.task.id + " (remote spec unavailable)";
  return r;
}

StrategistResponse RemoteStrategist::refine_plan(const StrategistRequest& req) {
  if (!req.failing_spec) return fallback_.refine_plan(req);
  StrategistResponse r;
  const std::string prompt = fill_template(
      std::string(prompt_asset("refine_plan")),
      {{"TASK_DESCRIPTION", req.task.text},
       {"FAILURE_REASON", req.failure_reason.empty() ? "unknown" : req.failure_reason},
       {"STAGES_REACHED", std::to_string(req.stages_reached + 1)},
       {"HISTORY", history_json(req).dump()},
       {"CURRENT_SPEC", dump_spec(*req.failing_spec)}});
  CostSpec spec;
  std::vector<std::string> warnings;
  const Reply reply = ask("refine_plan", prompt,
                          [&](const json& j) { return check_spec(j, req.belief, spec, warnings); },
                          r.events, true);
  if (!reply.value) {
    StrategistResponse h = fallback_.refine_plan(req);
    h.events.insert(h.events.begin(), r.events.begin(), r.events.end());
    return h;
  }
  for (auto& w : warnings) r.events.push_back("remote strategist: cost spec: " + w);
  r.spec = std::move(spec);
  r.action = "remote_rewrite";
  r.explanation = split_explanation(reply.text).second;
  if (r.explanation.empty()) r.explanation = "remote rewrite (no explanation given)";
  return r;
}

StrategistResponse RemoteStrategist::refine_params(const StrategistRequest& req) {
  StrategistResponse r;
  json current = json::array();
  for (const auto& [label, o] : req.belief.objects) {
    current.push_back({{"label", label}, {"mass", o.mass}, {"friction", o.friction}});
  }
  const std::string prompt =
      fill_template(std::string(prompt_asset("refine_params")),
                    {{"OBJECT_PARAMS", current.dump(2)}, {"HISTORY", history_json(req).dump()}});
  ParamMap params;
  const Reply reply = ask("refine_params", prompt,
                          [&](const json& j) -> std::vector<std::string> {
                            try {
                              params = params_from_reply(j, req.belief);
                              return {};
                            } catch (const ValidationError& e) {
                              return e.violations();
                            }
                          },
                          r.events);
  if (!reply.value) {
    StrategistResponse h = fallback_.refine_params(req);
    h.events.insert(h.events.begin(), r.events.begin(), r.events.end());
    return h;
  }
  std::ostringstream expl;
  expl << "remote estimate:";
  for (const auto& [label, u] : params) {
    expl << ' ' << label;
    if (u.mass) expl << " mass " << *u.mass << " kg";
    if (u.friction) expl << " friction " << *u.friction;
  }
  r.params = std::move(params);
  r.action = "remote_params";
  r.explanation = expl.str();
  return r;
}

}  // namespace coral
