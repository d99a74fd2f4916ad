#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cirforge::embed {

/// One corpus entry: an image id with its caption.
struct ImageRecord {
  std::uint64_t id = 0;
  std::string caption;
  std::optional<std::string> source_url;

  bool operator==(const ImageRecord&) const = default;
};

/// Reads a JSON-lines corpus. Records keep file order; blank lines are skipped.
/// Throws ParseError (with line number) on malformed lines and ValidationError
/// on duplicate ids or empty captions.
std::vector<ImageRecord> load_corpus(const std::filesystem::path& path);
std::vector<ImageRecord> parse_corpus(std::istream& in);

void write_corpus(const std::vector<ImageRecord>& records, const std::filesystem::path& path);

enum class StoreKind : std::uint32_t { caption = 0, image = 1 };

inline constexpr double kNormTolerance = 1e-4;
inline constexpr std::size_t kStoreHeaderBytes = 24;

/// Unit-norm float vectors keyed by image id.
///
/// Entries keep insertion order, which is also the on-disk order, so a store
/// read back from disk serializes to the same bytes.
class EmbeddingStore {
 public:
  EmbeddingStore(std::uint32_t dim, StoreKind kind);

  /// Throws ValidationError on dim mismatch, duplicate id, non-finite values
  /// or an L2 norm further than kNormTolerance from 1.
  void add(std::uint64_t id, std::span<const float> vector);

  std::uint32_t dim() const noexcept { return dim_; }
  StoreKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  bool contains(std::uint64_t id) const { return index_.contains(id); }

  /// Throws ValidationError naming the id when it is absent.
  std::span<const float> vector(std::uint64_t id) const;

  const std::vector<std::uint64_t>& ids() const noexcept { return ids_; }
  std::uint64_t id_at(std::size_t row) const { return ids_[row]; }
  std::span<const float> row(std::size_t row) const {
    return {data_.data() + row * dim_, dim_};
  }

  /// Same dim, kind, ids in the same order and bit-identical floats.
  bool operator==(const EmbeddingStore& other) const;

 private:
  std::uint32_t dim_;
  StoreKind kind_;
  std::vector<std::uint64_t> ids_;
  std::vector<float> data_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

void write_store(const EmbeddingStore& store, std::ostream& out);
void write_store(const EmbeddingStore& store, const std::filesystem::path& path);

/// Throws FormatError on bad magic, unknown kind or truncation, and
/// ValidationError (naming the id) when a vector fails the norm check.
EmbeddingStore read_store(std::istream& in);
EmbeddingStore read_store(const std::filesystem::path& path);

/// Deterministic stand-in for a sentence encoder.
///
/// Each token maps to a pseudo-random unit Gaussian direction drawn from a
/// counter-based generator keyed by (seed, token bytes). Token vectors are
/// summed in sorted token order and the sum is L2-normalized, so two texts
/// with the same token multiset embed bit-identically. Text without tokens
/// embeds as the direction of the empty token. Requires dim >= 8.
std::vector<float> synthetic_embed(std::string_view text, std::uint32_t dim, std::uint64_t seed);

/// Embeds every record's caption with synthetic_embed, in corpus order.
EmbeddingStore embed_corpus(const std::vector<ImageRecord>& corpus, std::uint32_t dim, std::uint64_t seed);

double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace cirforge::embed
