#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cirforge/checkpoint.hpp"
#include "cirforge/embed_store.hpp"
#include "cirforge/numcore.hpp"
#include "cirforge/optim.hpp"

namespace cirforge::model {

enum class Variant { full, no_fusion, static_aggregation };
enum class Finetune { freeze, text_only, both };

std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);
std::string_view finetune_name(Finetune f);
std::optional<Finetune> parse_finetune(std::string_view name);

struct ModelConfig {
  std::size_t d = 32;
  std::size_t fusion_layers = 2;
  std::size_t heads = 8;
  Variant variant = Variant::full;
  Finetune finetune = Finetune::both;
  /// Hashed vocabulary of the toy text encoder; bucket 0 is the global token.
  std::size_t vocab = 4096;
  /// Token cap of the toy text encoder, global token included.
  std::size_t max_text_tokens = 32;
  /// Token rows of the toy image grid, global row included.
  std::size_t image_tokens = 17;
  /// Width of the toy image feature grid.
  std::size_t feature_dim = 64;
  std::uint64_t feature_seed = 0;
  std::uint64_t init_seed = 0;

  bool operator==(const ModelConfig&) const = default;

  /// Throws ValidationError when d is not divisible by heads or a size is zero.
  void validate() const;
  /// Name of the first differing field, if any.
  std::optional<std::string> first_difference(const ModelConfig& other) const;
};

/// Token features of one input; row 0 is the global feature.
struct Encoded {
  nc::Var tokens;
  nc::Var global() const { return nc::slice(tokens, 0, 0, 1); }
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Encoded encode(std::string_view caption) const = 0;
};

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  /// Throws ValidationError naming an id without features.
  virtual Encoded encode(std::uint64_t id) const = 0;
  virtual bool contains(std::uint64_t id) const = 0;
};

/// Fixed per-image feature grid (tokens x feature width), row 0 global.
class ImageFeatureSource {
 public:
  virtual ~ImageFeatureSource() = default;
  virtual std::size_t feature_dim() const = 0;
  virtual bool contains(std::uint64_t id) const = 0;
  /// Throws ValidationError naming an unknown id.
  virtual const nc::Tensor& grid(std::uint64_t id) const = 0;
};

/// Toy "image" derived from the caption: row 0 is synthetic_embed(caption),
/// rows 1.. are synthetic_embed of the caption's first tokens, zero padded.
class CaptionGridSource : public ImageFeatureSource {
 public:
  CaptionGridSource(const std::vector<embed::ImageRecord>& corpus, std::size_t rows, std::size_t feature_dim,
                    std::uint64_t seed);
  std::size_t feature_dim() const override { return feature_dim_; }
  bool contains(std::uint64_t id) const override { return grids_.contains(id); }
  const nc::Tensor& grid(std::uint64_t id) const override;

 private:
  std::size_t feature_dim_;
  std::unordered_map<std::uint64_t, nc::Tensor> grids_;
};

/// Global image features from an image-kind embedding store; one row per id.
class StoreGridSource : public ImageFeatureSource {
 public:
  explicit StoreGridSource(const embed::EmbeddingStore& store);
  std::size_t feature_dim() const override { return feature_dim_; }
  bool contains(std::uint64_t id) const override { return grids_.contains(id); }
  const nc::Tensor& grid(std::uint64_t id) const override;

 private:
  std::size_t feature_dim_;
  std::unordered_map<std::uint64_t, nc::Tensor> grids_;
};

/// Hashed token embeddings: bucket 1 + fnv1a(token) % (vocab - 1). The global
/// row is the bucket-0 embedding plus the mean of the word rows.
class HashTextEncoder : public TextEncoder {
 public:
  HashTextEncoder(nc::Var table, std::size_t max_tokens) : table_(std::move(table)), max_tokens_(max_tokens) {}
  Encoded encode(std::string_view caption) const override;
  std::vector<std::size_t> token_ids(std::string_view caption) const;

 private:
  nc::Var table_;
  std::size_t max_tokens_;
};

/// Trainable linear projection of a fixed feature grid to width d.
class ProjectedImageEncoder : public ImageEncoder {
 public:
  ProjectedImageEncoder(nc::Var projection, std::shared_ptr<const ImageFeatureSource> source)
      : projection_(std::move(projection)), source_(std::move(source)) {}
  Encoded encode(std::uint64_t id) const override;
  bool contains(std::uint64_t id) const override { return source_->contains(id); }

 private:
  nc::Var projection_;
  std::shared_ptr<const ImageFeatureSource> source_;
};

/// Every intermediate of one composed query.
struct FeatureBundle {
  nc::Var F_Vr, F_W, F_sep;
  nc::Var F_Vr_prime, F_sep_prime, F_W_prime;
  nc::Var F_U, F_Vr_G, F_W_G;
  /// 1 x 3 aggregation weights (w1, w2, w3).
  nc::Var weights;
  nc::Var Q;
};

/// The combination w1 * F_Vr_G + w2 * F_U + w3 * F_W_G for a 1 x 3 `weights`.
nc::Var combine(const nc::Var& F_Vr_G, const nc::Var& F_U, const nc::Var& F_W_G, const nc::Var& weights);

/// -mean_i log softmax_j(cos(Q_i, T_j) / tau)[i]. Throws ValidationError for
/// tau <= 0, mismatched batches or a zero-norm row.
nc::Var bbc_loss(const nc::Var& queries, const nc::Var& targets, double tau);

class TransAgg {
 public:
  /// Builds the toy text encoder and a projected image encoder over `images`,
  /// initializes every parameter from config.init_seed and applies the
  /// fine-tune mask.
  TransAgg(ModelConfig config, std::shared_ptr<const ImageFeatureSource> images);

  const ModelConfig& config() const noexcept { return config_; }
  nc::ParameterSet& params() noexcept { return params_; }
  const nc::ParameterSet& params() const noexcept { return params_; }
  const TextEncoder& text_encoder() const { return *text_; }
  const ImageEncoder& image_encoder() const { return *image_; }

  /// Marks encoder parameters trainable per mode; fusion and aggregation
  /// parameters always train.
  void apply_finetune_mask(Finetune mode);

  /// [F_Vr; F_sep; F_W] through the fusion layers, split back into spans.
  void fuse(FeatureBundle& b) const;
  /// Fills F_U, weights and Q from the (fused) bundle.
  void aggregate(FeatureBundle& b) const;

  FeatureBundle forward(std::uint64_t ref_id, std::string_view caption) const;
  /// 1 x d composed query.
  nc::Var compose_query(std::uint64_t ref_id, std::string_view caption) const;
  /// B x d global image features.
  nc::Var image_globals(std::span<const std::uint64_t> ids) const;

  nc::TensorTable export_params() const;
  /// Throws FormatError on a missing or misshapen parameter.
  void import_params(const nc::TensorTable& table);

 private:
  nc::Var layer(const nc::Var& x, std::size_t l) const;
  const nc::Var& p(const std::string& name) const { return params_.get(name); }

  ModelConfig config_;
  nc::ParameterSet params_;
  std::unique_ptr<HashTextEncoder> text_;
  std::unique_ptr<ProjectedImageEncoder> image_;
};

}  // namespace cirforge::model
