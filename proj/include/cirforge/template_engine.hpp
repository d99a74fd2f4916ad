#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cirforge/chunker.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/rng.hpp"

namespace cirforge::edit {

enum class EditType {
  Cardinality,
  Addition,
  Negation,
  DirectAddressing,
  CompareChange,
  Comparative,
  Viewpoint,
  Conjunction,
};

inline constexpr std::array<EditType, 8> kAllEditTypes = {
    EditType::Cardinality,   EditType::Addition,    EditType::Negation,  EditType::DirectAddressing,
    EditType::CompareChange, EditType::Comparative, EditType::Viewpoint, EditType::Conjunction,
};

/// The single-type edits a conjunction may combine.
inline constexpr std::array<EditType, 6> kConjunctionParts = {
    EditType::Cardinality,   EditType::Addition,    EditType::Negation,
    EditType::CompareChange, EditType::Comparative, EditType::Viewpoint,
};

/// snake_case name used in files and on the command line ("compare_change").
std::string_view edit_type_name(EditType type);
std::optional<EditType> parse_edit_type(std::string_view name);

struct EditResult {
  std::string relative_caption;
  std::string edited_caption;
  EditType edit_type = EditType::Cardinality;
  /// Cosine of the substituted phrase; set only for band-selected substitutions.
  std::optional<double> substitution_similarity;

  bool operator==(const EditResult&) const = default;
};

/// The caption lacks the material an edit type needs.
class NotApplicable : public Error {
 public:
  NotApplicable(EditType type, std::string reason)
      : Error(std::string(edit_type_name(type)) + " not applicable: " + reason),
        type_(type),
        reason_(std::move(reason)) {}

  EditType type() const noexcept { return type_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  EditType type_;
  std::string reason_;
};

/// Relative-caption templates per edit type, loaded from "type<TAB>template" lines.
class TemplateBank {
 public:
  static TemplateBank parse(std::string_view tsv);
  static const TemplateBank& builtin();

  /// Empty for the rule-based types (direct addressing, comparative, conjunction).
  const std::vector<std::string>& templates(EditType type) const;

 private:
  std::unordered_map<EditType, std::vector<std::string>> table_;
};

std::vector<std::string> list_templates(EditType type);

struct Antonym {
  std::string word;
  std::string comparative;
};

/// adjective -> (antonym, comparative form of the antonym).
class AntonymTable {
 public:
  static AntonymTable parse(std::string_view tsv);
  static const AntonymTable& builtin();

  const Antonym* find(std::string_view adjective) const;
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::unordered_map<std::string, Antonym> table_;
};

/// Substitutes {name} placeholders. Throws ValidationError on an unknown or
/// unterminated placeholder.
std::string fill_template(std::string_view tmpl, const std::unordered_map<std::string, std::string>& values);

/// True when `text` is an instantiation of `tmpl` with non-empty placeholder values.
/// {num1} must be a single token, {num2} all digits, and a repeated
/// placeholder must repeat the same value.
bool matches_template(std::string_view tmpl, std::string_view text);

using Embedder = std::function<std::vector<float>(std::string_view)>;

/// Closed similarity interval [low, high].
struct Band {
  double low = 0.5;
  double high = 0.7;
};

struct SimilarPhrase {
  chunk::NounPhrase phrase;
  double similarity = 0.0;
};

/// Uniformly samples a candidate whose cosine to the anchor lies in the band.
/// Returns nullopt when nothing qualifies.
std::optional<SimilarPhrase> select_similar_phrase(const chunk::NounPhrase& anchor,
                                                   std::span<const chunk::NounPhrase> candidates,
                                                   const Embedder& embedder, Band band, Rng& rng);

/// Corpus-wide substitution pool: deduplicated noun phrases with their embeddings.
class PhrasePool {
 public:
  PhrasePool() = default;
  PhrasePool(std::vector<chunk::NounPhrase> phrases, const Embedder& embedder);

  /// Noun phrases of every caption, deduplicated by text in first-seen order.
  static PhrasePool from_captions(std::span<const std::string> captions, const chunk::Lexicon& lexicon,
                                  const Embedder& embedder);

  std::size_t size() const noexcept { return phrases_.size(); }
  const std::vector<chunk::NounPhrase>& phrases() const noexcept { return phrases_; }

  /// Band selection against precomputed embeddings; candidates whose text is
  /// in `exclude_texts` are skipped.
  std::optional<SimilarPhrase> select(std::string_view anchor_text, const Embedder& embedder, Band band, Rng& rng,
                                      std::span<const std::string> exclude_texts = {}) const;

 private:
  std::vector<chunk::NounPhrase> phrases_;
  std::vector<std::vector<float>> vectors_;
};

/// Read-only inputs shared by every edit.
struct EditEnvironment {
  const chunk::Lexicon* lexicon = &chunk::Lexicon::builtin();
  const TemplateBank* templates = &TemplateBank::builtin();
  const AntonymTable* antonyms = &AntonymTable::builtin();
  const PhrasePool* pool = nullptr;
  Embedder embedder;
  Band band;
};

/// Supplies a corpus caption within the band of the reference caption, for direct addressing.
using DirectTargetSampler = std::function<std::optional<std::string>(Rng&)>;

/// Samples every free choice of `type` from `rng` and renders the edit.
/// Throws NotApplicable when the caption cannot support the edit.
EditResult apply_edit(EditType type, std::string_view caption, const EditEnvironment& env, Rng& rng,
                      const DirectTargetSampler& direct_target = {});

// Deterministic renderers: every choice is explicit. apply_edit samples the
// choices and delegates here.

EditResult render_cardinality(const chunk::CaptionAnalysis& caption, std::size_t number_index,
                              std::size_t template_index, std::uint64_t num2,
                              const TemplateBank& bank = TemplateBank::builtin());

EditResult render_addition(const chunk::CaptionAnalysis& caption, std::string_view added_noun,
                           std::size_t template_index, std::optional<double> similarity,
                           const TemplateBank& bank = TemplateBank::builtin());

EditResult render_negation(const chunk::CaptionAnalysis& caption, std::size_t phrase_index,
                           std::size_t template_index, const TemplateBank& bank = TemplateBank::builtin());

EditResult render_direct_addressing(std::string_view target_caption);

EditResult render_compare_change(const chunk::CaptionAnalysis& caption, std::size_t phrase_index,
                                 std::string_view replacement, std::size_t template_index,
                                 std::optional<double> similarity,
                                 const TemplateBank& bank = TemplateBank::builtin());

/// `token_index` names an adjective inside a noun phrase that has an antonym entry.
EditResult render_comparative(const chunk::CaptionAnalysis& caption, std::size_t token_index,
                              const AntonymTable& antonyms = AntonymTable::builtin());

EditResult render_viewpoint(const chunk::CaptionAnalysis& caption, std::size_t phrase_index,
                            std::size_t template_index, const TemplateBank& bank = TemplateBank::builtin());

/// `second` must have been applied to `first.edited_caption`.
EditResult render_conjunction(const EditResult& first, const EditResult& second);

}  // namespace cirforge::edit
