#include "cirforge/transagg.hpp"

#include <cmath>
#include <map>

#include "cirforge/errors.hpp"
#include "cirforge/rng.hpp"
#include "cirforge/text.hpp"

namespace cirforge::model {

using nc::Tensor;
using nc::Var;

namespace {

Tensor gaussian(std::uint64_t seed, const std::string& name, std::size_t rows, std::size_t cols, double stddev) {
  Rng rng(derive_seed(seed, fnv1a64(name)));
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& x : t.data()) x = rng.normal() * stddev;
  return t;
}

Var head_slice(const Var& x, std::size_t h, std::size_t dh) { return nc::slice(x, 1, h * dh, (h + 1) * dh); }

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_fusion: return "no_fusion";
    case Variant::static_aggregation: return "static_aggregation";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (auto v : {Variant::full, Variant::no_fusion, Variant::static_aggregation}) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

std::string_view finetune_name(Finetune f) {
  switch (f) {
    case Finetune::freeze: return "freeze";
    case Finetune::text_only: return "text_only";
    case Finetune::both: return "both";
  }
  return "unknown";
}

std::optional<Finetune> parse_finetune(std::string_view name) {
  for (auto f : {Finetune::freeze, Finetune::text_only, Finetune::both}) {
    if (finetune_name(f) == name) return f;
  }
  return std::nullopt;
}

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || fusion_layers == 0) throw ValidationError("d, heads and fusion_layers must be positive");
  if (d % heads != 0) {
    throw ValidationError("d = " + std::to_string(d) + " is not divisible by heads = " + std::to_string(heads));
  }
  if (vocab < 2) throw ValidationError("vocab must be at least 2");
  if (max_text_tokens < 1 || image_tokens < 1) throw ValidationError("token counts must be positive");
  if (feature_dim < 8) throw ValidationError("feature_dim must be at least 8");
}

std::optional<std::string> ModelConfig::first_difference(const ModelConfig& o) const {
  if (d != o.d) return "d";
  if (fusion_layers != o.fusion_layers) return "fusion_layers";
  if (heads != o.heads) return "heads";
  if (variant != o.variant) return "variant";
  if (finetune != o.finetune) return "finetune";
  if (vocab != o.vocab) return "vocab";
  if (max_text_tokens != o.max_text_tokens) return "max_text_tokens";
  if (image_tokens != o.image_tokens) return "image_tokens";
  if (feature_dim != o.feature_dim) return "feature_dim";
  if (feature_seed != o.feature_seed) return "feature_seed";
  if (init_seed != o.init_seed) return "init_seed";
  return std::nullopt;
}

CaptionGridSource::CaptionGridSource(const std::vector<embed::ImageRecord>& corpus, std::size_t rows,
                                     std::size_t feature_dim, std::uint64_t seed)
    : feature_dim_(feature_dim) {
  const auto dim = static_cast<std::uint32_t>(feature_dim);
  std::unordered_map<std::string, std::vector<float>> token_cache;
  for (const auto& rec : corpus) {
    Tensor g = Tensor::matrix(rows, feature_dim);
    const auto whole = embed::synthetic_embed(rec.caption, dim, seed);
    for (std::size_t j = 0; j < feature_dim; ++j) g(0, j) = whole[j];
    const auto tokens = tokenize_words(rec.caption);
    for (std::size_t r = 1; r < rows && r - 1 < tokens.size(); ++r) {
      auto it = token_cache.find(tokens[r - 1]);
      if (it == token_cache.end()) {
        it = token_cache.emplace(tokens[r - 1], embed::synthetic_embed(tokens[r - 1], dim, seed)).first;
      }
      for (std::size_t j = 0; j < feature_dim; ++j) g(r, j) = it->second[j];
    }
    if (!grids_.emplace(rec.id, std::move(g)).second) {
      throw ValidationError("duplicate image id " + std::to_string(rec.id));
    }
  }
}

const Tensor& CaptionGridSource::grid(std::uint64_t id) const {
  auto it = grids_.find(id);
  if (it == grids_.end()) throw ValidationError("no image features for id " + std::to_string(id));
  return it->second;
}

StoreGridSource::StoreGridSource(const embed::EmbeddingStore& store) : feature_dim_(store.dim()) {
  for (std::size_t r = 0; r < store.size(); ++r) {
    Tensor g = Tensor::matrix(1, feature_dim_);
    const auto row = store.row(r);
    for (std::size_t j = 0; j < feature_dim_; ++j) g(0, j) = row[j];
    grids_.emplace(store.id_at(r), std::move(g));
  }
}

const Tensor& StoreGridSource::grid(std::uint64_t id) const {
  auto it = grids_.find(id);
  if (it == grids_.end()) throw ValidationError("no image features for id " + std::to_string(id));
  return it->second;
}

std::vector<std::size_t> HashTextEncoder::token_ids(std::string_view caption) const {
  const std::size_t vocab = table_.rows();
  std::vector<std::size_t> ids{0};
  for (const auto& tok : tokenize_words(caption)) {
    if (ids.size() >= max_tokens_) break;
    ids.push_back(1 + static_cast<std::size_t>(fnv1a64(tok) % (vocab - 1)));
  }
  return ids;
}

Encoded HashTextEncoder::encode(std::string_view caption) const {
  const auto ids = token_ids(caption);
  const Var rows = nc::embedding_lookup(table_, ids);
  if (ids.size() == 1) return {rows};
  const Var words = nc::slice(rows, 0, 1, ids.size());
  const Var avg = nc::mul_scalar(nc::matmul(nc::constant(Tensor::matrix(1, words.rows(), 1.0)), words),
                                 1.0 / static_cast<double>(words.rows()));
  const Var global = nc::add(nc::slice(rows, 0, 0, 1), avg);
  return {nc::concat({global, words}, 0)};
}

Encoded ProjectedImageEncoder::encode(std::uint64_t id) const {
  return {nc::matmul(nc::constant(source_->grid(id)), projection_)};
}

Var combine(const Var& F_Vr_G, const Var& F_U, const Var& F_W_G, const Var& weights) {
  if (weights.rows() != 1 || weights.cols() != 3) {
    throw ValidationError("combine: weights must be 1 x 3, got " + weights.value().shape_string());
  }
  const Var a = nc::mul_col(F_Vr_G, nc::slice(weights, 1, 0, 1));
  const Var b = nc::mul_col(F_U, nc::slice(weights, 1, 1, 2));
  const Var c = nc::mul_col(F_W_G, nc::slice(weights, 1, 2, 3));
  return nc::add(nc::add(a, b), c);
}

Var bbc_loss(const Var& queries, const Var& targets, double tau) {
  if (!(tau > 0.0)) throw ValidationError("bbc_loss: tau must be positive");
  if (queries.rows() != targets.rows()) {
    throw ValidationError("bbc_loss: " + std::to_string(queries.rows()) + " queries but " +
                          std::to_string(targets.rows()) + " targets");
  }
  if (queries.rows() == 0) throw ValidationError("bbc_loss: empty batch");
  const Var logits = nc::mul_scalar(nc::cosine_similarity(queries, targets), 1.0 / tau);
  return nc::mul_scalar(nc::mean(nc::take_diagonal(nc::log_softmax(logits))), -1.0);
}

TransAgg::TransAgg(ModelConfig config, std::shared_ptr<const ImageFeatureSource> images)
    : config_(config) {
  config_.validate();
  if (!images) throw ValidationError("TransAgg needs an image feature source");
  const std::size_t d = config_.d;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const auto seed = config_.init_seed;
  using nc::ParamGroup;

  auto add = [&](const std::string& name, Tensor t, ParamGroup g = ParamGroup::head) {
    return params_.add(name, std::move(t), g);
  };
  const Var table = add("text.emb", gaussian(seed, "text.emb", config_.vocab, d, sd), ParamGroup::encoder);
  const Var proj =
      add("image.proj", gaussian(seed, "image.proj", images->feature_dim(), d, sd), ParamGroup::encoder);
  text_ = std::make_unique<HashTextEncoder>(table, config_.max_text_tokens);
  image_ = std::make_unique<ProjectedImageEncoder>(proj, std::move(images));

  if (config_.variant != Variant::no_fusion) {
    const std::size_t max_len = config_.image_tokens + 1 + config_.max_text_tokens;
    add("fuse.sep", gaussian(seed, "fuse.sep", 1, d, sd));
    add("fuse.pos", gaussian(seed, "fuse.pos", max_len, d, 0.02));
    for (std::size_t l = 0; l < config_.fusion_layers; ++l) {
      const std::string pre = "fuse." + std::to_string(l) + ".";
      add(pre + "ln1.g", Tensor::matrix(1, d, 1.0));
      add(pre + "ln1.b", Tensor::matrix(1, d));
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        add(pre + "attn." + w, gaussian(seed, pre + "attn." + w, d, d, sd));
        add(pre + "attn.b" + std::string(w + 1), Tensor::matrix(1, d));
      }
      add(pre + "ln2.g", Tensor::matrix(1, d, 1.0));
      add(pre + "ln2.b", Tensor::matrix(1, d));
      add(pre + "ffn.w1", gaussian(seed, pre + "ffn.w1", d, 4 * d, sd));
      add(pre + "ffn.b1", Tensor::matrix(1, 4 * d));
      add(pre + "ffn.w2", gaussian(seed, pre + "ffn.w2", 4 * d, d, sd / 2));
      add(pre + "ffn.b2", Tensor::matrix(1, d));
    }
  }
  add("agg.mlp.w1", gaussian(seed, "agg.mlp.w1", 2 * d, d, 1.0 / std::sqrt(2.0 * static_cast<double>(d))));
  add("agg.mlp.b1", Tensor::matrix(1, d));
  add("agg.mlp.w2", gaussian(seed, "agg.mlp.w2", d, d, sd));
  add("agg.mlp.b2", Tensor::matrix(1, d));
  if (config_.variant == Variant::static_aggregation) {
    add("agg.static", Tensor::matrix(1, 3, 1.0 / 3.0));
  } else {
    add("agg.w", Tensor::matrix(d, 3));
    add("agg.b", Tensor::matrix(1, 3, 1.0 / 3.0));
  }
  apply_finetune_mask(config_.finetune);
}

void TransAgg::apply_finetune_mask(Finetune mode) {
  config_.finetune = mode;
  for (const auto& np : params_.params()) {
    Var v = np.var;
    if (np.name.starts_with("text.")) {
      v.set_requires_grad(mode != Finetune::freeze);
    } else if (np.name.starts_with("image.")) {
      v.set_requires_grad(mode == Finetune::both);
    } else {
      v.set_requires_grad(true);
    }
  }
}

Var TransAgg::layer(const Var& x, std::size_t l) const {
  const std::string pre = "fuse." + std::to_string(l) + ".";
  const std::size_t d = config_.d;
  const std::size_t dh = d / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Var h = nc::add_row(nc::mul_row(nc::layer_norm(x), p(pre + "ln1.g")), p(pre + "ln1.b"));
  const Var q = nc::linear(h, p(pre + "attn.wq"), p(pre + "attn.bq"));
  const Var k = nc::linear(h, p(pre + "attn.wk"), p(pre + "attn.bk"));
  const Var v = nc::linear(h, p(pre + "attn.wv"), p(pre + "attn.bv"));
  std::vector<Var> heads;
  heads.reserve(config_.heads);
  for (std::size_t i = 0; i < config_.heads; ++i) {
    const Var scores = nc::mul_scalar(nc::matmul(head_slice(q, i, dh), nc::transpose(head_slice(k, i, dh))), scale);
    heads.push_back(nc::matmul(nc::softmax(scores), head_slice(v, i, dh)));
  }
  const Var attn = nc::linear(nc::concat(heads, 1), p(pre + "attn.wo"), p(pre + "attn.bo"));
  const Var x1 = nc::add(x, attn);

  const Var h2 = nc::add_row(nc::mul_row(nc::layer_norm(x1), p(pre + "ln2.g")), p(pre + "ln2.b"));
  const Var f = nc::linear(nc::relu(nc::linear(h2, p(pre + "ffn.w1"), p(pre + "ffn.b1"))), p(pre + "ffn.w2"),
                           p(pre + "ffn.b2"));
  return nc::add(x1, f);
}

void TransAgg::fuse(FeatureBundle& b) const {
  if (config_.variant == Variant::no_fusion) throw ValidationError("fuse: the no_fusion variant has no fusion module");
  const std::size_t nv = b.F_Vr.rows(), nw = b.F_W.rows();
  if (b.F_Vr.cols() != config_.d || b.F_W.cols() != config_.d || b.F_sep.cols() != config_.d) {
    throw ValidationError("fuse: token features must have width " + std::to_string(config_.d));
  }
  const std::size_t n = nv + 1 + nw;
  const Var& pos = p("fuse.pos");
  if (n > pos.rows()) {
    throw ValidationError("fuse: " + std::to_string(n) + " tokens exceed the positional table of " +
                          std::to_string(pos.rows()));
  }
  Var x = nc::add(nc::concat({b.F_Vr, b.F_sep, b.F_W}, 0), nc::slice(pos, 0, 0, n));
  for (std::size_t l = 0; l < config_.fusion_layers; ++l) x = layer(x, l);
  b.F_Vr_prime = nc::slice(x, 0, 0, nv);
  b.F_sep_prime = nc::slice(x, 0, nv, nv + 1);
  b.F_W_prime = nc::slice(x, 0, nv + 1, n);
}

void TransAgg::aggregate(FeatureBundle& b) const {
  const Var u_in = config_.variant == Variant::no_fusion
                       ? nc::concat({b.F_Vr_G, b.F_W_G}, 1)
                       : nc::concat({nc::slice(b.F_Vr_prime, 0, 0, 1), nc::slice(b.F_W_prime, 0, 0, 1)}, 1);
  b.F_U = nc::linear(nc::relu(nc::linear(u_in, p("agg.mlp.w1"), p("agg.mlp.b1"))), p("agg.mlp.w2"),
                     p("agg.mlp.b2"));
  b.weights = config_.variant == Variant::static_aggregation ? p("agg.static")
                                                             : nc::linear(b.F_U, p("agg.w"), p("agg.b"));
  b.Q = combine(b.F_Vr_G, b.F_U, b.F_W_G, b.weights);
}

FeatureBundle TransAgg::forward(std::uint64_t ref_id, std::string_view caption) const {
  FeatureBundle b;
  const Encoded img = image_->encode(ref_id);
  const Encoded txt = text_->encode(caption);
  b.F_Vr = img.tokens;
  b.F_W = txt.tokens;
  b.F_Vr_G = img.global();
  b.F_W_G = txt.global();
  if (config_.variant != Variant::no_fusion) {
    b.F_sep = p("fuse.sep");
    fuse(b);
  }
  aggregate(b);
  return b;
}

Var TransAgg::compose_query(std::uint64_t ref_id, std::string_view caption) const {
  return forward(ref_id, caption).Q;
}

Var TransAgg::image_globals(std::span<const std::uint64_t> ids) const {
  std::vector<Var> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(image_->encode(id).global());
  return nc::concat(rows, 0);
}

nc::TensorTable TransAgg::export_params() const {
  nc::TensorTable out;
  for (const auto& np : params_.params()) out.emplace_back(np.name, np.var.value());
  return out;
}

void TransAgg::import_params(const nc::TensorTable& table) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : table) by_name[name] = &t;
  for (const auto& np : params_.params()) {
    auto it = by_name.find(np.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + np.name + "'");
    if (it->second->shape() != np.var.value().shape()) {
      throw FormatError("checkpoint parameter '" + np.name + "' has shape " + it->second->shape_string() +
                        ", model expects " + np.var.value().shape_string());
    }
  }
  for (const auto& np : params_.params()) {
    Var v = np.var;
    v.mutable_value() = *by_name[np.name];
  }
}

}  // namespace cirforge::model
