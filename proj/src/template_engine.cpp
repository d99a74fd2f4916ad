#include "cirforge/template_engine.hpp"

#include <algorithm>
#include <regex>

#include "cirforge/embed_store.hpp"
#include "cirforge/embedded_data.hpp"
#include "cirforge/text.hpp"

namespace cirforge::edit {

namespace {

using chunk::CaptionAnalysis;
using chunk::NounPhrase;
using chunk::Tag;

constexpr std::uint64_t kMinCount = 2;
constexpr std::uint64_t kMaxCount = 10;

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    fields.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return fields;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[static_cast<std::size_t>(rng.index(items.size()))];
}

const std::string& template_at(const TemplateBank& bank, EditType type, std::size_t index) {
  const auto& t = bank.templates(type);
  if (index >= t.size()) {
    throw ValidationError("template index " + std::to_string(index) + " out of range for " +
                          std::string(edit_type_name(type)));
  }
  return t[index];
}

const NounPhrase& phrase_at(const CaptionAnalysis& a, std::size_t index, EditType type) {
  if (index >= a.noun_phrases.size()) throw NotApplicable(type, "no noun phrase at index " + std::to_string(index));
  return a.noun_phrases[index];
}

std::string splice(std::string_view s, std::size_t begin, std::size_t end, std::string_view replacement) {
  std::string out;
  out.reserve(s.size() + replacement.size());
  out.append(s.substr(0, begin));
  out.append(replacement);
  out.append(s.substr(end));
  return out;
}

// Drops trailing whitespace and sentence-final punctuation.
std::string_view strip_sentence_end(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) {
    s.remove_suffix(1);
    s = trim(s);
  }
  return s;
}

EditResult apply_single(EditType type, std::string_view caption, const EditEnvironment& env, Rng& rng,
                        const DirectTargetSampler& direct_target);

EditResult apply_cardinality(const CaptionAnalysis& a, const EditEnvironment& env, Rng& rng) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < a.numbers.size(); ++i) {
    if (a.numbers[i].following_noun) usable.push_back(i);
  }
  if (a.numbers.empty()) throw NotApplicable(EditType::Cardinality, "caption has no numbers");
  if (usable.empty()) throw NotApplicable(EditType::Cardinality, "no number is followed by a noun phrase");
  const std::size_t which = pick(usable, rng);
  const auto& templates = env.templates->templates(EditType::Cardinality);
  const std::size_t tmpl = static_cast<std::size_t>(rng.index(templates.size()));
  std::uint64_t num2 = 0;
  if (templates[tmpl].find("{num2}") != std::string::npos) {
    std::vector<std::uint64_t> choices;
    for (std::uint64_t n = kMinCount; n <= kMaxCount; ++n) {
      if (n != a.numbers[which].value) choices.push_back(n);
    }
    num2 = pick(choices, rng);
  }
  return render_cardinality(a, which, tmpl, num2, *env.templates);
}

EditResult apply_addition(const CaptionAnalysis& a, const EditEnvironment& env, Rng& rng) {
  if (a.noun_phrases.empty()) throw NotApplicable(EditType::Addition, "caption has no noun phrase");
  if (env.pool == nullptr) throw NotApplicable(EditType::Addition, "no phrase pool");
  const auto& anchor = pick(a.noun_phrases, rng);
  std::vector<std::string> present;
  for (const auto& np : a.noun_phrases) present.push_back(np.text);
  auto chosen = env.pool->select(anchor.text, env.embedder, env.band, rng, present);
  if (!chosen) throw NotApplicable(EditType::Addition, "no pool phrase within the similarity band");
  const auto& templates = env.templates->templates(EditType::Addition);
  const std::size_t tmpl = static_cast<std::size_t>(rng.index(templates.size()));
  return render_addition(a, chosen->phrase.text, tmpl, chosen->similarity, *env.templates);
}

EditResult apply_negation(const CaptionAnalysis& a, const EditEnvironment& env, Rng& rng) {
  if (a.noun_phrases.empty()) throw NotApplicable(EditType::Negation, "caption has no noun phrase");
  const std::size_t which = static_cast<std::size_t>(rng.index(a.noun_phrases.size()));
  const auto& templates = env.templates->templates(EditType::Negation);
  const std::size_t tmpl = static_cast<std::size_t>(rng.index(templates.size()));
  return render_negation(a, which, tmpl, *env.templates);
}

EditResult apply_compare_change(const CaptionAnalysis& a, const EditEnvironment& env, Rng& rng) {
  if (a.noun_phrases.empty()) throw NotApplicable(EditType::CompareChange, "caption has no noun phrase");
  if (env.pool == nullptr) throw NotApplicable(EditType::CompareChange, "no phrase pool");
  const std::size_t which = static_cast<std::size_t>(rng.index(a.noun_phrases.size()));
  const auto& anchor = a.noun_phrases[which];
  const std::string self[] = {anchor.text};
  auto chosen = env.pool->select(anchor.text, env.embedder, env.band, rng, self);
  if (!chosen) throw NotApplicable(EditType::CompareChange, "no pool phrase within the similarity band");
  const auto& templates = env.templates->templates(EditType::CompareChange);
  const std::size_t tmpl = static_cast<std::size_t>(rng.index(templates.size()));
  return render_compare_change(a, which, chosen->phrase.text, tmpl, chosen->similarity, *env.templates);
}

EditResult apply_comparative(const CaptionAnalysis& a, const EditEnvironment& env, Rng& rng) {
  std::vector<std::size_t> adjectives;
  for (const auto& np : a.noun_phrases) {
    for (std::size_t k = np.start_token; k < np.head_start; ++k) {
      if (a.tags[k] == Tag::ADJ && env.antonyms->find(a.tokens[k].text) != nullptr) adjectives.push_back(k);
    }
  }
  if (adjectives.empty()) throw NotApplicable(EditType::Comparative, "no adjective with a known antonym");
  return render_comparative(a, pick(adjectives, rng), *env.antonyms);
}

EditResult apply_viewpoint(const CaptionAnalysis& a, const EditEnvironment& env, Rng& rng) {
  if (a.noun_phrases.empty()) throw NotApplicable(EditType::Viewpoint, "caption has no noun phrase");
  const std::size_t which = static_cast<std::size_t>(rng.index(a.noun_phrases.size()));
  const auto& templates = env.templates->templates(EditType::Viewpoint);
  const std::size_t tmpl = static_cast<std::size_t>(rng.index(templates.size()));
  return render_viewpoint(a, which, tmpl, *env.templates);
}

EditResult apply_conjunction(std::string_view caption, const EditEnvironment& env, Rng& rng) {
  auto order = kConjunctionParts;
  rng.shuffle(std::span<EditType>(order));
  std::optional<EditResult> first;
  for (EditType type : order) {
    try {
      if (!first) {
        first = apply_single(type, caption, env, rng, {});
      } else if (type != first->edit_type) {
        auto second = apply_single(type, first->edited_caption, env, rng, {});
        return render_conjunction(*first, second);
      }
    } catch (const NotApplicable&) {
      // try the next type
    }
  }
  throw NotApplicable(EditType::Conjunction, "fewer than two edit types apply");
}

EditResult apply_single(EditType type, std::string_view caption, const EditEnvironment& env, Rng& rng,
                        const DirectTargetSampler& direct_target) {
  if (trim(caption).empty()) throw ValidationError("cannot edit an empty caption");
  if (type == EditType::Conjunction) return apply_conjunction(caption, env, rng);
  if (type == EditType::DirectAddressing) {
    if (!direct_target) throw NotApplicable(type, "no target sampler");
    auto target = direct_target(rng);
    if (!target) throw NotApplicable(type, "no corpus caption within the similarity band");
    return render_direct_addressing(*target);
  }
  const auto a = chunk::analyze(caption, *env.lexicon);
  switch (type) {
    case EditType::Cardinality: return apply_cardinality(a, env, rng);
    case EditType::Addition: return apply_addition(a, env, rng);
    case EditType::Negation: return apply_negation(a, env, rng);
    case EditType::CompareChange: return apply_compare_change(a, env, rng);
    case EditType::Comparative: return apply_comparative(a, env, rng);
    case EditType::Viewpoint: return apply_viewpoint(a, env, rng);
    default: break;
  }
  throw ValidationError("unhandled edit type");
}

}  // namespace

std::string_view edit_type_name(EditType type) {
  switch (type) {
    case EditType::Cardinality: return "cardinality";
    case EditType::Addition: return "addition";
    case EditType::Negation: return "negation";
    case EditType::DirectAddressing: return "direct_addressing";
    case EditType::CompareChange: return "compare_change";
    case EditType::Comparative: return "comparative";
    case EditType::Viewpoint: return "viewpoint";
    case EditType::Conjunction: return "conjunction";
  }
  return "unknown";
}

std::optional<EditType> parse_edit_type(std::string_view name) {
  for (EditType t : kAllEditTypes) {
    if (edit_type_name(t) == name) return t;
  }
  return std::nullopt;
}

TemplateBank TemplateBank::parse(std::string_view tsv) {
  TemplateBank bank;
  std::size_t line_no = 0;
  for (auto line : split_lines(tsv)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2) throw ParseError("expected edit_type<TAB>template", line_no);
    const auto type = parse_edit_type(trim(fields[0]));
    if (!type) throw ParseError("unknown edit type '" + std::string(fields[0]) + "'", line_no);
    if (trim(fields[1]).empty()) throw ParseError("empty template", line_no);
    bank.table_[*type].emplace_back(fields[1]);
  }
  return bank;
}

const TemplateBank& TemplateBank::builtin() {
  static const TemplateBank bank = parse(data::templates_tsv());
  return bank;
}

const std::vector<std::string>& TemplateBank::templates(EditType type) const {
  static const std::vector<std::string> none;
  auto it = table_.find(type);
  return it == table_.end() ? none : it->second;
}

std::vector<std::string> list_templates(EditType type) { return TemplateBank::builtin().templates(type); }

AntonymTable AntonymTable::parse(std::string_view tsv) {
  AntonymTable table;
  std::size_t line_no = 0;
  for (auto line : split_lines(tsv)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) throw ParseError("expected adjective<TAB>antonym<TAB>comparative", line_no);
    std::string word(trim(fields[0]));
    if (table.table_.contains(word)) throw ParseError("duplicate adjective '" + word + "'", line_no);
    table.table_.emplace(std::move(word), Antonym{std::string(trim(fields[1])), std::string(trim(fields[2]))});
  }
  return table;
}

const AntonymTable& AntonymTable::builtin() {
  static const AntonymTable table = parse(data::antonyms_tsv());
  return table;
}

const Antonym* AntonymTable::find(std::string_view adjective) const {
  auto it = table_.find(std::string(adjective));
  return it == table_.end() ? nullptr : &it->second;
}

std::string fill_template(std::string_view tmpl, const std::unordered_map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw ValidationError("unterminated placeholder in template");
    const std::string name(tmpl.substr(open + 1, close - open - 1));
    auto it = values.find(name);
    if (it == values.end()) throw ValidationError("no value for placeholder {" + name + "}");
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

bool matches_template(std::string_view tmpl, std::string_view text) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string pattern;
  std::vector<std::string> names;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const char c = tmpl[pos];
    if (c == '{') {
      const auto close = tmpl.find('}', pos);
      if (close == std::string_view::npos) return false;
      const std::string name(tmpl.substr(pos + 1, close - pos - 1));
      auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) {
        names.push_back(name);
        // Counts are single tokens; the replacement count is always numeric.
        if (name == "num2") {
          pattern += "([0-9]+)";
        } else if (name == "num1") {
          pattern += "([A-Za-z0-9]+)";
        } else {
          pattern += "(.+)";
        }
      } else {
        pattern += "\\" + std::to_string(std::distance(names.begin(), it) + 1);
      }
      pos = close + 1;
      continue;
    }
    if (special.find(c) != std::string::npos) pattern.push_back('\\');
    pattern.push_back(c);
    ++pos;
  }
  return std::regex_match(std::string(text), std::regex(pattern));
}

std::optional<SimilarPhrase> select_similar_phrase(const NounPhrase& anchor, std::span<const NounPhrase> candidates,
                                                   const Embedder& embedder, Band band, Rng& rng) {
  const auto anchor_vec = embedder(anchor.text);
  std::vector<SimilarPhrase> qualifying;
  for (const auto& c : candidates) {
    const double sim = embed::cosine(anchor_vec, embedder(c.text));
    if (sim >= band.low && sim <= band.high) qualifying.push_back({c, sim});
  }
  if (qualifying.empty()) return std::nullopt;
  return qualifying[static_cast<std::size_t>(rng.index(qualifying.size()))];
}

PhrasePool::PhrasePool(std::vector<NounPhrase> phrases, const Embedder& embedder) : phrases_(std::move(phrases)) {
  vectors_.reserve(phrases_.size());
  for (const auto& p : phrases_) vectors_.push_back(embedder(p.text));
}

PhrasePool PhrasePool::from_captions(std::span<const std::string> captions, const chunk::Lexicon& lexicon,
                                     const Embedder& embedder) {
  std::vector<NounPhrase> phrases;
  std::unordered_map<std::string, bool> seen;
  for (const auto& caption : captions) {
    for (auto& np : chunk::extract_noun_phrases(caption, lexicon)) {
      if (seen.emplace(np.text, true).second) phrases.push_back(std::move(np));
    }
  }
  return PhrasePool(std::move(phrases), embedder);
}

std::optional<SimilarPhrase> PhrasePool::select(std::string_view anchor_text, const Embedder& embedder, Band band,
                                                Rng& rng, std::span<const std::string> exclude_texts) const {
  const auto anchor_vec = embedder(anchor_text);
  std::vector<std::size_t> qualifying;
  std::vector<double> sims;
  for (std::size_t i = 0; i < phrases_.size(); ++i) {
    if (std::find(exclude_texts.begin(), exclude_texts.end(), phrases_[i].text) != exclude_texts.end()) continue;
    const double sim = embed::cosine(anchor_vec, vectors_[i]);
    if (sim >= band.low && sim <= band.high) {
      qualifying.push_back(i);
      sims.push_back(sim);
    }
  }
  if (qualifying.empty()) return std::nullopt;
  const auto k = static_cast<std::size_t>(rng.index(qualifying.size()));
  return SimilarPhrase{phrases_[qualifying[k]], sims[k]};
}

EditResult apply_edit(EditType type, std::string_view caption, const EditEnvironment& env, Rng& rng,
                      const DirectTargetSampler& direct_target) {
  return apply_single(type, caption, env, rng, direct_target);
}

EditResult render_cardinality(const CaptionAnalysis& a, std::size_t number_index, std::size_t template_index,
                              std::uint64_t num2, const TemplateBank& bank) {
  if (number_index >= a.numbers.size()) throw NotApplicable(EditType::Cardinality, "caption has no numbers");
  const auto& mention = a.numbers[number_index];
  if (!mention.following_noun) throw NotApplicable(EditType::Cardinality, "number is not followed by a noun phrase");
  const auto& tmpl = template_at(bank, EditType::Cardinality, template_index);
  const auto& tok = a.tokens[mention.token_index];
  const bool numeric_form = tmpl.find("{num2}") != std::string::npos;
  const std::string replacement = numeric_form ? std::to_string(num2) : "a group of";
  EditResult r;
  r.edit_type = EditType::Cardinality;
  r.relative_caption = fill_template(tmpl, {{"num1", tok.text},
                                            {"num2", std::to_string(num2)},
                                            {"noun", mention.following_noun->text}});
  r.edited_caption = splice(a.caption, tok.begin, tok.end, replacement);
  return r;
}

EditResult render_addition(const CaptionAnalysis& a, std::string_view added_noun, std::size_t template_index,
                           std::optional<double> similarity, const TemplateBank& bank) {
  const auto& tmpl = template_at(bank, EditType::Addition, template_index);
  EditResult r;
  r.edit_type = EditType::Addition;
  r.relative_caption = fill_template(tmpl, {{"noun", std::string(added_noun)}});
  r.edited_caption = std::string(strip_sentence_end(a.caption)) + " with " + std::string(added_noun);
  r.substitution_similarity = similarity;
  return r;
}

EditResult render_negation(const CaptionAnalysis& a, std::size_t phrase_index, std::size_t template_index,
                           const TemplateBank& bank) {
  const auto& np = phrase_at(a, phrase_index, EditType::Negation);
  const auto& tmpl = template_at(bank, EditType::Negation, template_index);
  std::size_t begin = np.byte_begin;
  if (np.start_token > 0) {
    const auto& prev = a.tokens[np.start_token - 1];
    if (prev.text == "with" || prev.text == "and") begin = prev.begin;
  }
  std::string edited = squeeze_spaces(splice(a.caption, begin, np.byte_end, ""));
  if (tokenize_words(edited).empty()) {
    throw NotApplicable(EditType::Negation, "removing '" + np.text + "' leaves an empty caption");
  }
  EditResult r;
  r.edit_type = EditType::Negation;
  r.relative_caption = fill_template(tmpl, {{"noun_phrase", np.text}});
  r.edited_caption = std::move(edited);
  return r;
}

EditResult render_direct_addressing(std::string_view target_caption) {
  EditResult r;
  r.edit_type = EditType::DirectAddressing;
  r.relative_caption = std::string(trim(target_caption));
  r.edited_caption = r.relative_caption;
  if (r.relative_caption.empty()) throw NotApplicable(EditType::DirectAddressing, "empty target caption");
  return r;
}

EditResult render_compare_change(const CaptionAnalysis& a, std::size_t phrase_index, std::string_view replacement,
                                 std::size_t template_index, std::optional<double> similarity,
                                 const TemplateBank& bank) {
  const auto& np = phrase_at(a, phrase_index, EditType::CompareChange);
  const auto& tmpl = template_at(bank, EditType::CompareChange, template_index);
  EditResult r;
  r.edit_type = EditType::CompareChange;
  r.relative_caption =
      fill_template(tmpl, {{"noun_phrase1", np.text}, {"noun_phrase2", std::string(replacement)}});
  r.edited_caption = splice(a.caption, np.byte_begin, np.byte_end, replacement);
  r.substitution_similarity = similarity;
  return r;
}

EditResult render_comparative(const CaptionAnalysis& a, std::size_t token_index, const AntonymTable& antonyms) {
  const NounPhrase* owner = nullptr;
  for (const auto& np : a.noun_phrases) {
    if (token_index >= np.start_token && token_index < np.head_start) owner = &np;
  }
  if (owner == nullptr || a.tags[token_index] != Tag::ADJ) {
    throw NotApplicable(EditType::Comparative, "token is not an adjective inside a noun phrase");
  }
  const auto& tok = a.tokens[token_index];
  const Antonym* ant = antonyms.find(tok.text);
  if (ant == nullptr) throw NotApplicable(EditType::Comparative, "no antonym for '" + tok.text + "'");
  EditResult r;
  r.edit_type = EditType::Comparative;
  r.relative_caption = ant->comparative + " " + chunk::head_noun(*owner, a.tokens);
  r.edited_caption = splice(a.caption, tok.begin, tok.end, ant->word);
  return r;
}

EditResult render_viewpoint(const CaptionAnalysis& a, std::size_t phrase_index, std::size_t template_index,
                            const TemplateBank& bank) {
  const auto& np = phrase_at(a, phrase_index, EditType::Viewpoint);
  const auto& tmpl = template_at(bank, EditType::Viewpoint, template_index);
  const std::string_view size_word = tmpl.find("zoom out") != std::string::npos ? "small" : "big";
  std::size_t insert_token = np.start_token;
  if (a.tags[insert_token] == Tag::DET && insert_token + 1 < np.end_token) ++insert_token;
  const std::size_t at = a.tokens[insert_token].begin;
  EditResult r;
  r.edit_type = EditType::Viewpoint;
  r.relative_caption = fill_template(tmpl, {{"noun", chunk::head_noun(np, a.tokens)}});
  r.edited_caption = splice(a.caption, at, at, std::string(size_word) + " ");
  return r;
}

EditResult render_conjunction(const EditResult& first, const EditResult& second) {
  EditResult r;
  r.edit_type = EditType::Conjunction;
  r.relative_caption = std::string(strip_sentence_end(first.relative_caption)) + " and " + second.relative_caption;
  r.edited_caption = second.edited_caption;
  r.substitution_similarity =
      first.substitution_similarity ? first.substitution_similarity : second.substitution_similarity;
  return r;
}

}  // namespace cirforge::edit
