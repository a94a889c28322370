#include <doctest.h>

#include "coral/control_loop.hpp"
#include "coral/remote_strategist.hpp"

// after Eigen: httplib pulls in <resolv.h>, whose _res macro clashes with Eigen internals
#include <mock_llm.hpp>

using namespace coral;
using nlohmann::json;

namespace {

// example reply for the board prompt, verbatim apart from the quotes
const char* kParamReply = R"({
  "cutting_board": {
    "pose_estimated": [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    "mass_kg": 0.4,
    "friction_coeff": 0.4
  }
})";

StrategistRequest board_request() {
  const Scene scene = default_scene("push_pick_board");
  StrategistRequest req;
  req.task = brief_of(scene, SimConfig{});
  req.belief = init_belief(scene.truth, scene.bias);
  return req;
}

std::unique_ptr<RemoteStrategist> remote_for(const coral::testing::MockLlm& mock) {
  RemoteConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.api_key = "test-key";
  cfg.model = "mock";
  cfg.timeout_s = 5;
  return std::make_unique<RemoteStrategist>(std::make_unique<HttpChatClient>(cfg));
}

std::string fenced(const std::string& body, const std::string& lang = "json") {
  return "Here you go.\n```" + lang + "\n" + body + "\n```\nLet me know if anything else is needed.";
}

}  // namespace

TEST_CASE("JSON extraction") {
  CHECK(extract_json(kParamReply) == json::parse(kParamReply));
  CHECK(extract_json(fenced("{\"a\": 1}")) == json{{"a", 1}});
  SUBCASE("the first fenced block that parses wins") {
    const std::string reply = "```\nnot json\n```\n```json\n[1, 2]\n```\n```json\n{\"b\": 2}\n```";
    CHECK(extract_json(reply) == json::array({1, 2}));
  }
  SUBCASE("bare JSON inside prose, braces in strings") {
    const std::string reply = "Sure: {\"note\": \"a } brace\", \"x\": [1, {\"y\": 2}]} done.";
    CHECK(extract_json(reply) == json::parse(R"({"note": "a } brace", "x": [1, {"y": 2}]})"));
  }
  CHECK_FALSE(extract_json("no json here"));
  CHECK_FALSE(extract_json("{broken"));
}

TEST_CASE("explanation split") {
  auto [spec, why] = split_explanation("{\"stages\": []}\n---\nBecause the push stalled.");
  CHECK(spec == "{\"stages\": []}\n");
  CHECK(why == "Because the push stalled.");
  auto [only, none] = split_explanation("{\"a\": 1}");
  CHECK(only == "{\"a\": 1}");
  CHECK(none.empty());
}

TEST_CASE("parameter replies") {
  const StrategistRequest req = board_request();
  SUBCASE("object shape") {
    const ParamMap p = params_from_reply(json::parse(kParamReply), req.belief);
    CHECK(p.at("cutting_board").mass.value() == doctest::Approx(0.4));
    CHECK(p.at("cutting_board").friction.value() == doctest::Approx(0.4));
  }
  SUBCASE("array shape and numeric strings") {
    const ParamMap p = params_from_reply(
        json::parse(R"([{"label": "cutting_board", "mass": "0.3", "friction": 0.45}])"), req.belief);
    CHECK(p.at("cutting_board").mass.value() == doctest::Approx(0.3));
  }
  SUBCASE("unfilled placeholders and unknown labels are rejected") {
    CHECK_THROWS_AS(params_from_reply(json::parse(R"({"cutting_board": {"mass_kg": "?", "friction_coeff": "?"}})"),
                                      req.belief),
                    ValidationError);
    CHECK_THROWS_AS(params_from_reply(json::parse(R"({"spoon": {"mass_kg": 1}})"), req.belief),
                    ValidationError);
  }
}

TEST_CASE("prompt templates") {
  for (const char* name : {"param_estimate", "cost_spec", "refine_plan", "refine_params", "regions"}) {
    CHECK_FALSE(prompt_asset(name).empty());
  }
  CHECK_THROWS_AS(prompt_asset("nope"), std::out_of_range);
  CHECK(fill_template("a {X} b {X} {Y}", {{"X", "1"}, {"Y", "2"}}) == "a 1 b 1 2");
}

TEST_CASE("formulate through the chat endpoint") {
  coral::testing::MockLlm mock;
  auto remote = remote_for(mock);
  StrategistRequest req = board_request();
  HeuristicStrategist h;
  const StrategistResponse tmpl = h.formulate(req);

  SUBCASE("valid replies are used as-is") {
    CostSpec spec = *tmpl.spec;
    spec.stages[0].terms[0].weight = 7.0;
    mock.push(kParamReply);
    mock.push(fenced(dump_spec(spec)));
    mock.push(fenced(regions_to_json(*tmpl.regions).dump()));
    const StrategistResponse r = remote->formulate(req);
    CHECK(r.action == "remote");
    REQUIRE(r.params);
    CHECK(r.params->at("cutting_board").mass.value() == doctest::Approx(0.4));
    REQUIRE(r.spec);
    CHECK(r.spec->stages[0].terms[0].weight == 7.0);
    CHECK(r.events.empty());

    const auto reqs = mock.requests();
    REQUIRE(reqs.size() == 3);
    CHECK(reqs[0]["temperature"] == 0);
    CHECK(reqs[0]["messages"].size() == 1);
    const std::string first = reqs[0]["messages"][0]["content"];
    CHECK(first.find(req.task.text) != std::string::npos);
    CHECK(first.find("\"mass_kg\": \"?\"") != std::string::npos);
    CHECK(first.find("{TASK_DESCRIPTION}") == std::string::npos);
    CHECK(mock.auth_headers()[0] == "Bearer test-key");
  }
  SUBCASE("one bad reply is retried with diagnostics") {
    mock.push("The board probably weighs about half a kilo.");
    mock.push(kParamReply);
    mock.push(fenced(dump_spec(*tmpl.spec)));
    mock.push(fenced(regions_to_json(*tmpl.regions).dump()));
    const StrategistResponse r = remote->formulate(req);
    CHECK(r.params);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].find("retrying") != std::string::npos);
    const std::string retry = mock.requests()[1]["messages"][0]["content"];
    CHECK(retry.find("Your previous reply was rejected") != std::string::npos);
    CHECK(retry.find("no JSON") != std::string::npos);
  }
  SUBCASE("two strikes fall back to the heuristic without aborting") {
    mock.set_fallback("```json\n{\"stages\": \"nonsense\"}\n```");
    const StrategistResponse r = remote->formulate(req);
    CHECK(r.action == "template");
    REQUIRE(r.spec);
    CHECK(*r.spec == *tmpl.spec);
    CHECK(*r.regions == *tmpl.regions);
    CHECK_FALSE(r.params);
    CHECK(mock.requests().size() == 6);
    int fallbacks = 0;
    for (const auto& e : r.events) fallbacks += e.find("falling back to heuristic") != std::string::npos;
    CHECK(fallbacks == 3);
  }
  SUBCASE("unknown labels in a spec count as a strike") {
    CostSpec bad = *tmpl.spec;
    bad.stages[0].terms[0].object = "spoon";
    mock.push(kParamReply);
    mock.push(fenced(dump_spec(bad)));
    mock.push(fenced(dump_spec(*tmpl.spec)));
    mock.push(fenced(regions_to_json(*tmpl.regions).dump()));
    const StrategistResponse r = remote->formulate(req);
    CHECK(r.action == "remote");
    CHECK(r.events.size() == 1);
    CHECK(r.events[0].find("spoon") != std::string::npos);
  }
}

TEST_CASE("transport errors fall back immediately") {
  StrategistRequest req = board_request();
  {
    coral::testing::MockLlm mock;
    auto remote = remote_for(mock);
    for (int i = 0; i < 3; ++i) mock.push("", 500);
    const StrategistResponse r = remote->formulate(req);
    CHECK(r.action == "template");
    CHECK(mock.requests().size() == 3);
    CHECK(r.events[0].find("HTTP 500") != std::string::npos);
  }
  RemoteConfig dead;
  dead.base_url = "http://127.0.0.1:1";
  dead.timeout_s = 2;
  RemoteStrategist remote(std::make_unique<HttpChatClient>(dead));
  const StrategistResponse r = remote.formulate(req);
  CHECK(r.spec);
  CHECK(r.action == "template");
  CHECK_THROWS_AS(HttpChatClient(RemoteConfig{}), ParameterDomainError);
}

TEST_CASE("refinement through the chat endpoint") {
  coral::testing::MockLlm mock;
  auto remote = remote_for(mock);
  StrategistRequest req = board_request();
  const CostSpec spec = task_spec(req.task, req.belief);
  req.failing_spec = spec;
  req.failure_reason = "budget";

  SUBCASE("plan rewrite with explanation") {
    CostSpec next = relax_transition(spec, 0);
    mock.push(fenced(dump_spec(next)) + "\n---\nThe push never reached the threshold.");
    const StrategistResponse r = remote->refine_plan(req);
    CHECK(r.action == "remote_rewrite");
    REQUIRE(r.spec);
    CHECK(*r.spec == next);
    CHECK(r.explanation == "The push never reached the threshold.");
    const std::string sent = mock.requests()[0]["messages"][0]["content"];
    CHECK(sent.find("budget") != std::string::npos);
  }
  SUBCASE("parameter refinement") {
    mock.push(R"([{"label": "cutting_board", "mass": 0.26, "friction": 0.52}])");
    const StrategistResponse r = remote->refine_params(req);
    CHECK(r.action == "remote_params");
    REQUIRE(r.params);
    CHECK(r.params->at("cutting_board").friction.value() == doctest::Approx(0.52));
  }
  SUBCASE("garbage twice: heuristic answers") {
    const StrategistResponse r = remote->refine_plan(req);
    CHECK(r.action == "relax_threshold");
    CHECK(mock.requests().size() == 2);
  }
}
