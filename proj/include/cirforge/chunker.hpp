#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cirforge/text.hpp"

namespace cirforge::chunk {

enum class Tag { DET, ADJ, NOUN, NUM, OTHER };

std::string_view tag_name(Tag tag);

/// Word to coarse part-of-speech table.
///
/// Words missing from the table are tagged NOUN when alphabetic, NUM when all
/// digits and OTHER otherwise.
class Lexicon {
 public:
  Lexicon() = default;

  /// Parses "word<TAB>TAG" lines. Blank lines and lines starting with '#' are
  /// ignored; anything else malformed raises ParseError with the line number.
  static Lexicon parse(std::string_view tsv);
  static Lexicon load(const std::filesystem::path& path);

  /// The lexicon bundled with the library (data/lexicon.tsv).
  static const Lexicon& builtin();

  void set(std::string_view word, Tag tag);
  Tag tag(std::string_view word) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::unordered_map<std::string, Tag> entries_;
};

/// A DET? ADJ* NOUN+ span of caption tokens, [start_token, end_token).
struct NounPhrase {
  std::string text;
  std::size_t start_token = 0;
  std::size_t end_token = 0;
  /// First token of the NOUN+ tail.
  std::size_t head_start = 0;
  /// Byte range of the span in the source caption.
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;

  bool operator==(const NounPhrase&) const = default;
};

/// Text of the NOUN+ tail of a phrase, e.g. "red cars" -> "cars".
std::string head_noun(const NounPhrase& phrase, const std::vector<Token>& tokens);

struct NumberMention {
  std::uint64_t value = 0;
  std::size_t token_index = 0;
  std::optional<NounPhrase> following_noun;
};

std::vector<std::string> tokenize(std::string_view caption);

std::vector<NounPhrase> extract_noun_phrases(std::string_view caption, const Lexicon& lexicon);

std::vector<NumberMention> extract_numbers(std::string_view caption, const Lexicon& lexicon);

/// Everything the edit engine needs from one caption, computed in one pass.
struct CaptionAnalysis {
  std::string caption;
  std::vector<Token> tokens;
  std::vector<Tag> tags;
  std::vector<NounPhrase> noun_phrases;
  std::vector<NumberMention> numbers;
};

CaptionAnalysis analyze(std::string_view caption, const Lexicon& lexicon);

/// Value of a spelled-out number word ("two" -> 2), if it has one.
std::optional<std::uint64_t> number_word_value(std::string_view word);

}  // namespace cirforge::chunk
