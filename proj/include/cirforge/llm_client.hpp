#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>

#include "cirforge/errors.hpp"

namespace cirforge::llm {

struct LlmEdit {
  std::string instruction;
  std::string edited_description;

  bool operator==(const LlmEdit&) const = default;
};

/// A response that does not follow the two-line grammar. `field()` is
/// "instruction" or "edited_description".
class ResponseError : public Error {
 public:
  ResponseError(std::string message, std::string field) : Error(std::move(message)), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class MissingField : public ResponseError {
 public:
  explicit MissingField(const std::string& field) : ResponseError("missing field: " + field, field) {}
};

class EmptyField : public ResponseError {
 public:
  explicit EmptyField(const std::string& field) : ResponseError("empty field: " + field, field) {}
};

/// The fixed instruction prompt with `caption` in the "Image Content:" slot.
/// Throws ValidationError on an empty caption.
std::string build_prompt(std::string_view caption);

/// Inverse of build_prompt; nullopt when `prompt` was not produced by it.
std::optional<std::string> caption_from_prompt(std::string_view prompt);

/// Reads the first "Instruction:" line and the first "Edited Description:"
/// line. Markers match case-insensitively after leading whitespace; values are
/// trimmed.
LlmEdit parse_response(std::string_view response);

/// Canonical two-line form accepted by parse_response.
std::string serialize(const LlmEdit& edit);

/// send() either returns the reply text or throws TransportError.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string send(std::string_view prompt) = 0;
};

/// Offline transport answering from canned responses keyed by caption.
class MockTransport : public ChatTransport {
 public:
  MockTransport() = default;

  /// JSON lines of {"caption": ..., "response": ...}; one optional
  /// {"default": ...} line answers every other caption.
  static MockTransport load(const std::filesystem::path& path);
  static MockTransport parse(std::string_view jsonl);

  void add(std::string caption, std::string response);
  void set_default(std::string response) { default_ = std::move(response); }

  /// Throws TransportError for a prompt not built by build_prompt or a caption
  /// without a response and no default.
  std::string send(std::string_view prompt) override;

 private:
  std::unordered_map<std::string, std::string> responses_;
  std::optional<std::string> default_;
};

struct HttpConfig {
  /// Full chat-completions URL, e.g. "https://host/v1/chat/completions".
  std::string endpoint;
  std::string model;
  /// Bearer token; empty sends no Authorization header.
  std::string token;
  std::chrono::seconds timeout{30};
  int max_in_flight = 4;

  /// Reads CIRFORGE_LLM_ENDPOINT, CIRFORGE_LLM_MODEL and CIRFORGE_LLM_TOKEN.
  /// Throws ValidationError when the endpoint or model is unset.
  static HttpConfig from_environment();
};

/// Chat-completion client: POSTs {"model", "messages": [{"role": "user",
/// "content": prompt}]} and returns choices[0].message.content. Safe to call
/// from several threads; at most `max_in_flight` requests run at once.
class HttpTransport : public ChatTransport {
 public:
  explicit HttpTransport(HttpConfig config);
  ~HttpTransport() override;

  std::string send(std::string_view prompt) override;

 private:
  HttpConfig config_;
  std::string base_;
  std::string path_;
  std::counting_semaphore<256> slots_;
};

/// build_prompt -> send -> parse_response, re-sending up to `retries` times
/// when the reply does not parse. The last ResponseError is rethrown once
/// retries are exhausted; TransportError propagates immediately.
LlmEdit generate_llm_edit(std::string_view caption, ChatTransport& transport, int retries = 2);

}  // namespace cirforge::llm
