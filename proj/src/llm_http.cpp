#include "httplib.h"

#include <cstdlib>

#include "json.hpp"

#include "cirforge/llm_client.hpp"

namespace cirforge::llm {

namespace {

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace

HttpConfig HttpConfig::from_environment() {
  HttpConfig c;
  c.endpoint = env_or_empty("CIRFORGE_LLM_ENDPOINT");
  c.model = env_or_empty("CIRFORGE_LLM_MODEL");
  c.token = env_or_empty("CIRFORGE_LLM_TOKEN");
  if (c.endpoint.empty()) throw ValidationError("CIRFORGE_LLM_ENDPOINT is not set");
  if (c.model.empty()) throw ValidationError("CIRFORGE_LLM_MODEL is not set");
  return c;
}

HttpTransport::HttpTransport(HttpConfig config)
    : config_(std::move(config)), slots_(std::clamp(config_.max_in_flight, 1, 256)) {
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos) throw ValidationError("endpoint must be an absolute URL: " + config_.endpoint);
  const auto slash = config_.endpoint.find('/', scheme + 3);
  base_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
}

HttpTransport::~HttpTransport() = default;

std::string HttpTransport::send(std::string_view prompt) {
  nlohmann::json body = {
      {"model", config_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
  };

  slots_.acquire();
  struct Release {
    std::counting_semaphore<256>& s;
    ~Release() { s.release(); }
  } release{slots_};

  httplib::Client client(base_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("request to " + config_.endpoint + " returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected chat-completion reply: ") + e.what());
  }
}

}  // namespace cirforge::llm
