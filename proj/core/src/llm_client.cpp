#include "sift/datagen.hpp"

#include <cstdlib>

// After Eigen: the OpenSSL headers pulled in here define macros that clash
// with Eigen's kernels.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"

namespace sift::datagen {

using nlohmann::json;

HttpChatClient::HttpChatClient(HttpClientOptions options) : options_(std::move(options)) {
  const std::string& url = options_.base_url;
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url must include a scheme: '" + url + "'");
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported scheme '" + scheme + "'");
  const std::size_t path_at = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_at);
  path_prefix_ = path_at == std::string::npos ? "" : url.substr(path_at);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (options_.model.empty()) throw ConfigError("llm model name is empty");
  if (!options_.token_env.empty() && std::getenv(options_.token_env.c_str()) == nullptr)
    throw ConfigError("environment variable " + options_.token_env + " is not set");
}

TargetResponse HttpChatClient::complete(const ChatRequest& request) {
  json messages = json::array();
  if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
  messages.push_back({{"role", "user"}, {"content", request.user}});
  json body = {{"model", options_.model},
               {"messages", messages},
               {"temperature", request.decode.temperature},
               {"max_tokens", request.decode.max_new_tokens}};
  if (request.decode.seed) body["seed"] = *request.decode.seed;

  httplib::Client cli(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  httplib::Headers headers;
  if (!options_.token_env.empty()) {
    const char* token = std::getenv(options_.token_env.c_str());
    if (token == nullptr || *token == '\0')
      throw ConfigError("environment variable " + options_.token_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
  if (!res) throw TransportError(request.record_id + ": " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError(request.record_id + ": HTTP " + std::to_string(res->status));
  if (res->status >= 400) {
    if (res->body.find("content_filter") != std::string::npos) throw ProviderRefusal(request.record_id);
    throw TransportError(request.record_id + ": HTTP " + std::to_string(res->status));
  }

  TargetResponse out;
  try {
    const json j = json::parse(res->body);
    const json& choice = j.at("choices").at(0);
    const json& content = choice.at("message").at("content");
    out.text = content.is_null() ? "" : content.get<std::string>();
    if (choice.contains("finish_reason") && choice["finish_reason"].is_string())
      out.finish_reason = choice["finish_reason"].get<std::string>();
    if (j.contains("usage")) {
      out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
  } catch (const json::exception& e) {
    throw TransportError(request.record_id + ": malformed response: " + e.what());
  }
  return out;
}

}  // namespace sift::datagen
