#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cirforge/embed_store.hpp"
#include "cirforge/llm_client.hpp"
#include "cirforge/template_engine.hpp"

namespace cirforge::mine {

/// Edit-type tag for triplets produced through the LLM path.
inline constexpr std::string_view kLlmTag = "llm";

struct Triplet {
  std::uint64_t ref_id = 0;
  std::uint64_t target_id = 0;
  std::string relative_caption;
  /// edit_type_name() of the edit, or "llm".
  std::string edit_type;
  double mining_similarity = 0.0;

  bool operator==(const Triplet&) const = default;
};

struct Hit {
  std::uint64_t id = 0;
  double similarity = 0.0;

  bool operator==(const Hit&) const = default;
};

/// Exact cosine scan of every store row. Sorted by similarity descending,
/// ties by ascending id; ids in `exclude` never appear. Throws
/// ValidationError on a dim mismatch.
std::vector<Hit> rank_by_caption(std::span<const float> query, const embed::EmbeddingStore& store,
                                 std::size_t top_k, const std::unordered_set<std::uint64_t>& exclude = {});

/// Corpus captions joined with their caption embeddings.
class CaptionIndex {
 public:
  /// Throws ValidationError when a corpus id has no vector in `store`.
  CaptionIndex(const std::vector<embed::ImageRecord>& corpus, const embed::EmbeddingStore& store);

  const embed::EmbeddingStore& store() const noexcept { return *store_; }
  const std::string& caption(std::uint64_t id) const;
  /// Ids whose caption is byte-identical to `caption`.
  std::span<const std::uint64_t> ids_with_caption(const std::string& caption) const;

 private:
  const embed::EmbeddingStore* store_;
  std::unordered_map<std::uint64_t, std::string> captions_;
  std::unordered_map<std::string, std::vector<std::uint64_t>> by_caption_;
};

/// Embeds `edited_caption` and keeps the best `max_targets` corpus images with
/// similarity >= threshold. The reference id and every record whose caption
/// equals the reference caption are excluded.
std::vector<Triplet> mine_targets(const embed::ImageRecord& ref, std::string_view relative_caption,
                                  std::string_view edited_caption, std::string_view edit_type,
                                  const CaptionIndex& index, const edit::Embedder& embedder, double threshold,
                                  std::size_t max_targets = 1);

std::optional<Triplet> mine_triplet(const embed::ImageRecord& ref, const edit::EditResult& edit,
                                    const CaptionIndex& index, const edit::Embedder& embedder, double threshold);
std::optional<Triplet> mine_triplet(const embed::ImageRecord& ref, const llm::LlmEdit& edit,
                                    const CaptionIndex& index, const edit::Embedder& embedder, double threshold);

/// Corpus caption for direct addressing: uniform among captions whose cosine to
/// the reference caption lies in the band, excluding identical captions.
std::optional<std::string> sample_direct_target(const embed::ImageRecord& ref, const CaptionIndex& index,
                                                edit::Band band, Rng& rng);

enum class Method { Template, Llm };

struct MiningConfig {
  Method method = Method::Template;
  /// Sampling weight per edit type, indexed like kAllEditTypes.
  std::array<double, 8> mix = {1, 1, 1, 1, 1, 1, 1, 1};
  double threshold = 0.6;
  edit::Band band;
  std::uint64_t seed = 0;
  std::size_t targets_per_query = 1;
  int llm_retries = 2;
  unsigned threads = 1;
};

struct TypeStats {
  std::size_t attempted = 0;
  std::size_t not_applicable = 0;
  std::size_t below_threshold = 0;
  std::size_t emitted = 0;

  bool operator==(const TypeStats&) const = default;
};

struct DatasetStats {
  std::size_t records = 0;
  std::size_t triplets = 0;
  /// Keyed by edit-type tag.
  std::map<std::string, TypeStats> per_type;
  /// Records dropped because the LLM reply never parsed.
  std::size_t llm_parse_failures = 0;

  bool operator==(const DatasetStats&) const = default;
  std::string to_json() const;
};

struct MinedDataset {
  std::vector<Triplet> triplets;
  DatasetStats stats;
};

/// Per record, in id order: sample an edit type from the mix (template method)
/// or ask the transport (llm method), then mine targets. Record r draws from
/// Rng(derive_seed(seed, r.id)), so output does not depend on `threads`.
/// Throws ValidationError for a bad mix or threshold and TransportError from
/// the transport.
MinedDataset mine_dataset(const std::vector<embed::ImageRecord>& corpus, const embed::EmbeddingStore& store,
                          const edit::Embedder& embedder, const MiningConfig& config,
                          llm::ChatTransport* transport = nullptr);

/// mine_dataset, then writes the triplets as JSON lines to `out_path`.
DatasetStats build_dataset(const std::vector<embed::ImageRecord>& corpus, const embed::EmbeddingStore& store,
                           const edit::Embedder& embedder, const MiningConfig& config,
                           const std::filesystem::path& out_path, llm::ChatTransport* transport = nullptr);

/// JSON lines with fields ref_id, target_id, relative_caption, edit_type, mining_similarity.
void write_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path);
std::vector<Triplet> load_triplets(const std::filesystem::path& path);
std::vector<Triplet> parse_triplets(std::istream& in);

/// Parses "cardinality,negation" or "all" into mix weights of 1 and 0.
std::array<double, 8> parse_ops(std::string_view list);

}  // namespace cirforge::mine
