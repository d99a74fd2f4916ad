#include "cirforge/chunker.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cirforge/embedded_data.hpp"
#include "cirforge/errors.hpp"

namespace cirforge::chunk {

namespace {

bool all_digits(std::string_view w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool all_alpha(std::string_view w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  });
}

std::optional<Tag> parse_tag(std::string_view s) {
  if (s == "DET") return Tag::DET;
  if (s == "ADJ") return Tag::ADJ;
  if (s == "NOUN") return Tag::NOUN;
  if (s == "NUM") return Tag::NUM;
  if (s == "OTHER") return Tag::OTHER;
  return std::nullopt;
}

std::vector<NounPhrase> phrases_from(const std::vector<Token>& tokens, const std::vector<Tag>& tags) {
  std::vector<NounPhrase> out;
  std::size_t i = 0;
  const std::size_t n = tokens.size();
  while (i < n) {
    std::size_t j = i;
    if (tags[j] == Tag::DET) ++j;
    while (j < n && tags[j] == Tag::ADJ) ++j;
    const std::size_t head = j;
    while (j < n && tags[j] == Tag::NOUN) ++j;
    if (j == head) {
      ++i;
      continue;
    }
    NounPhrase np;
    np.start_token = i;
    np.end_token = j;
    np.head_start = head;
    np.byte_begin = tokens[i].begin;
    np.byte_end = tokens[j - 1].end;
    for (std::size_t k = i; k < j; ++k) {
      if (k > i) np.text.push_back(' ');
      np.text += tokens[k].text;
    }
    out.push_back(std::move(np));
    i = j;
  }
  return out;
}

std::vector<NumberMention> numbers_from(const std::vector<Token>& tokens, const std::vector<Tag>& tags,
                                        const std::vector<NounPhrase>& phrases) {
  std::vector<NumberMention> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tags[i] != Tag::NUM) continue;
    std::optional<std::uint64_t> value;
    const auto& w = tokens[i].text;
    if (all_digits(w)) {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
      if (ec == std::errc() && ptr == w.data() + w.size() && v > 0) value = v;
    } else {
      value = number_word_value(w);
    }
    if (!value) continue;
    NumberMention m;
    m.value = *value;
    m.token_index = i;
    for (const auto& np : phrases) {
      if (np.start_token == i + 1) {
        m.following_noun = np;
        break;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

std::string_view tag_name(Tag tag) {
  switch (tag) {
    case Tag::DET: return "DET";
    case Tag::ADJ: return "ADJ";
    case Tag::NOUN: return "NOUN";
    case Tag::NUM: return "NUM";
    case Tag::OTHER: return "OTHER";
  }
  return "OTHER";
}

Lexicon Lexicon::parse(std::string_view tsv) {
  Lexicon lex;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= tsv.size()) {
    std::size_t nl = tsv.find('\n', pos);
    if (nl == std::string_view::npos) nl = tsv.size();
    std::string_view line = tsv.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError("expected word<TAB>TAG", line_no);
    const auto word = trim(line.substr(0, tab));
    const auto tag = parse_tag(trim(line.substr(tab + 1)));
    if (word.empty()) throw ParseError("empty word", line_no);
    if (!tag) throw ParseError("unknown tag '" + std::string(line.substr(tab + 1)) + "'", line_no);
    lex.set(word, *tag);
  }
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = parse(data::lexicon_tsv());
  return lex;
}

void Lexicon::set(std::string_view word, Tag tag) {
  std::string key(word);
  std::transform(key.begin(), key.end(), key.begin(),
                 [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; });
  entries_[std::move(key)] = tag;
}

Tag Lexicon::tag(std::string_view word) const {
  if (auto it = entries_.find(std::string(word)); it != entries_.end()) return it->second;
  if (all_digits(word)) return Tag::NUM;
  if (all_alpha(word)) return Tag::NOUN;
  return Tag::OTHER;
}

std::string head_noun(const NounPhrase& phrase, const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t k = phrase.head_start; k < phrase.end_token; ++k) {
    if (k > phrase.head_start) out.push_back(' ');
    out += tokens[k].text;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view caption) { return tokenize_words(caption); }

CaptionAnalysis analyze(std::string_view caption, const Lexicon& lexicon) {
  CaptionAnalysis a;
  a.caption = std::string(caption);
  a.tokens = tokenize_with_offsets(caption);
  a.tags.reserve(a.tokens.size());
  for (const auto& t : a.tokens) a.tags.push_back(lexicon.tag(t.text));
  a.noun_phrases = phrases_from(a.tokens, a.tags);
  a.numbers = numbers_from(a.tokens, a.tags, a.noun_phrases);
  return a;
}

std::vector<NounPhrase> extract_noun_phrases(std::string_view caption, const Lexicon& lexicon) {
  return analyze(caption, lexicon).noun_phrases;
}

std::vector<NumberMention> extract_numbers(std::string_view caption, const Lexicon& lexicon) {
  return analyze(caption, lexicon).numbers;
}

std::optional<std::uint64_t> number_word_value(std::string_view word) {
  static const std::unordered_map<std::string_view, std::uint64_t> values = {
      {"one", 1},       {"two", 2},        {"three", 3},     {"four", 4},       {"five", 5},
      {"six", 6},       {"seven", 7},      {"eight", 8},     {"nine", 9},       {"ten", 10},
      {"eleven", 11},   {"twelve", 12},    {"thirteen", 13}, {"fourteen", 14},  {"fifteen", 15},
      {"sixteen", 16},  {"seventeen", 17}, {"eighteen", 18}, {"nineteen", 19},  {"twenty", 20},
      {"thirty", 30},   {"forty", 40},     {"fifty", 50},    {"sixty", 60},     {"seventy", 70},
      {"eighty", 80},   {"ninety", 90},    {"hundred", 100}, {"thousand", 1000}, {"dozen", 12},
  };
  if (auto it = values.find(word); it != values.end()) return it->second;
  return std::nullopt;
}

}  // namespace cirforge::chunk
