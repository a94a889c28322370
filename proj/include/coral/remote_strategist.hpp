#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "coral/strategist.hpp"

namespace coral {

/// Text of an embedded prompt template: param_estimate, cost_spec, refine_plan, refine_params,
/// regions. Throws std::out_of_range for other names.
std::string_view prompt_asset(std::string_view name);

/// Replaces every "{KEY}" in `tmpl` by its value.
std::string fill_template(std::string tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values);

/// First fenced code block that parses as JSON, else the first balanced bare JSON value.
std::optional<nlohmann::json> extract_json(std::string_view reply);

/// Accepts the per-object {"<label>": {"mass_kg", "friction_coeff"}} shape or an array of
/// {"label", "mass", "friction"}. Throws ValidationError listing every problem.
ParamMap params_from_reply(const nlohmann::json& j, const WorldBelief& belief);

/// Splits "<spec> --- <explanation>"; the explanation is empty without a separator line.
std::pair<std::string, std::string> split_explanation(std::string_view reply);

struct RemoteConfig {
  std::string base_url;  ///< e.g. http://localhost:8000 (the /v1/chat/completions path is appended)
  std::string api_key;
  std::string model;
  double timeout_s = 60.0;

  /// From CORAL_LLM_BASE_URL, CORAL_LLM_API_KEY and CORAL_LLM_MODEL.
  static RemoteConfig from_env();
};

/// One chat completion; returns the reply text or nullopt with `error` set.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::optional<std::string> complete(const std::string& prompt, std::string& error) = 0;
};

/// POST {base_url}/v1/chat/completions, temperature 0, single user message.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(RemoteConfig cfg);
  std::optional<std::string> complete(const std::string& prompt, std::string& error) override;

 private:
  RemoteConfig cfg_;
};

/// Prompt-protocol strategist. Every reply is extracted and validated; an invalid reply is
/// retried once with the diagnostics appended, after which the heuristic answers instead.
/// Transport errors fall back immediately. Never throws for remote behavior.
class RemoteStrategist : public Strategist {
 public:
  explicit RemoteStrategist(std::unique_ptr<ChatClient> client);

  std::string name() const override { return "remote"; }
  StrategistResponse formulate(const StrategistRequest& req) override;
  StrategistResponse refine_plan(const StrategistRequest& req) override;
  StrategistResponse refine_params(const StrategistRequest& req) override;

  /// Prompts sent so far, in order (for tests and traces).
  const std::vector<std::string>& sent() const { return sent_; }

 private:
  struct Reply {
    std::optional<nlohmann::json> value;
    std::string text;
  };
  /// Sends `prompt`, runs `check` on the reply (returns diagnostics, empty when valid), retries
  /// once. Appends degradation events to `events`.
  template <typename Check>
  Reply ask(const std::string& what, const std::string& prompt, Check check,
            std::vector<std::string>& events, bool with_explanation = false);

  std::unique_ptr<ChatClient> client_;
  HeuristicStrategist fallback_;
  std::vector<std::string> sent_;
};

}  // namespace coral
