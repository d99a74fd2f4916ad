#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cirforge {

/// A lowercased token plus the byte range it occupies in the source text.
struct Token {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Maximal runs of ASCII letters and digits, lowercased; everything else separates.
std::vector<Token> tokenize_with_offsets(std::string_view text);

std::vector<std::string> tokenize_words(std::string_view text);

std::string_view trim(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Collapses whitespace runs to one space and trims both ends.
std::string squeeze_spaces(std::string_view s);

}  // namespace cirforge
