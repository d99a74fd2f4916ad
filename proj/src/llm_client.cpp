#include "cirforge/llm_client.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cirforge/text.hpp"

namespace cirforge::llm {

namespace {

constexpr std::string_view kPromptHead =
    "I have an image. Carefully generate an informative instruction to edit this image content and generate a "
    "description of the edited image. I will put my image content beginning with \"Image Content:\". The "
    "instruction you generate should begin with \"Instruction:\". The edited description you generate should "
    "begin with \"Edited Description:\". The Instruction you generate can cover various semantic aspects, "
    "including cardinality, addition, negation, direct addressing, compare&change, comparative, conjunction, "
    "spatial relations&background, viewpoint. The edited description need to be as simple as possible. The "
    "instruction does not need to explicitly indicate which type it is. Avoid adding imaginary things. "
    "\"Image Content: ";
constexpr std::string_view kPromptTail = "\". Each time generate one instruction and one edited description only.";

constexpr std::string_view kInstruction = "Instruction:";
constexpr std::string_view kEdited = "Edited Description:";

bool starts_with_nocase(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
    if (lower(s[i]) != lower(prefix[i])) return false;
  }
  return true;
}

}  // namespace

std::string build_prompt(std::string_view caption) {
  if (trim(caption).empty()) throw ValidationError("build_prompt: empty caption");
  std::string out;
  out.reserve(kPromptHead.size() + caption.size() + kPromptTail.size());
  out.append(kPromptHead).append(caption).append(kPromptTail);
  return out;
}

std::optional<std::string> caption_from_prompt(std::string_view prompt) {
  if (prompt.size() < kPromptHead.size() + kPromptTail.size()) return std::nullopt;
  if (!prompt.starts_with(kPromptHead) || !prompt.ends_with(kPromptTail)) return std::nullopt;
  return std::string(prompt.substr(kPromptHead.size(), prompt.size() - kPromptHead.size() - kPromptTail.size()));
}

LlmEdit parse_response(std::string_view response) {
  std::optional<std::string> instruction;
  std::optional<std::string> edited;
  std::size_t pos = 0;
  while (pos <= response.size() && !(instruction && edited)) {
    std::size_t end = response.find('\n', pos);
    if (end == std::string_view::npos) end = response.size();
    const std::string_view line = trim(response.substr(pos, end - pos));
    if (!instruction && starts_with_nocase(line, kInstruction)) {
      instruction = std::string(trim(line.substr(kInstruction.size())));
    } else if (!edited && starts_with_nocase(line, kEdited)) {
      edited = std::string(trim(line.substr(kEdited.size())));
    }
    pos = end + 1;
  }
  if (!instruction) throw MissingField("instruction");
  if (!edited) throw MissingField("edited_description");
  if (instruction->empty()) throw EmptyField("instruction");
  if (edited->empty()) throw EmptyField("edited_description");
  return {std::move(*instruction), std::move(*edited)};
}

std::string serialize(const LlmEdit& edit) {
  return std::string(kInstruction) + " " + edit.instruction + "\n" + std::string(kEdited) + " " +
         edit.edited_description;
}

MockTransport MockTransport::parse(std::string_view jsonl) {
  MockTransport mock;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    if (j.contains("default")) {
      if (!j["default"].is_string()) throw ParseError("field 'default' must be a string", line_no);
      mock.set_default(j["default"].get<std::string>());
      continue;
    }
    if (!j.contains("caption") || !j["caption"].is_string() || !j.contains("response") ||
        !j["response"].is_string()) {
      throw ParseError("expected string fields 'caption' and 'response'", line_no);
    }
    mock.add(j["caption"].get<std::string>(), j["response"].get<std::string>());
  }
  return mock;
}

MockTransport MockTransport::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mock responses " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void MockTransport::add(std::string caption, std::string response) {
  responses_.insert_or_assign(std::move(caption), std::move(response));
}

std::string MockTransport::send(std::string_view prompt) {
  const auto caption = caption_from_prompt(prompt);
  if (!caption) throw TransportError("mock transport: prompt does not follow the caption-editing prompt");
  if (auto it = responses_.find(*caption); it != responses_.end()) return it->second;
  if (default_) return *default_;
  throw TransportError("mock transport: no response for caption \"" + *caption + "\"");
}

LlmEdit generate_llm_edit(std::string_view caption, ChatTransport& transport, int retries) {
  if (retries < 0) throw ValidationError("retries must be non-negative");
  const std::string prompt = build_prompt(caption);
  for (int attempt = 0;; ++attempt) {
    const std::string reply = transport.send(prompt);
    try {
      return parse_response(reply);
    } catch (const ResponseError&) {
      if (attempt >= retries) throw;
    }
  }
}

}  // namespace cirforge::llm
