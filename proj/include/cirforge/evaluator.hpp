#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cirforge/miner.hpp"
#include "cirforge/numcore.hpp"
#include "cirforge/transagg.hpp"
#include "json.hpp"

namespace cirforge::eval {

struct EvalQuery {
  std::uint64_t ref_id = 0;
  std::string relative_caption;
  std::uint64_t target_id = 0;
  /// Candidate set for Recall_Subset@K; must contain target_id.
  std::optional<std::vector<std::uint64_t>> subset_ids;

  bool operator==(const EvalQuery&) const = default;
};

/// JSON lines {"ref_id", "relative_caption", "target_id", "subset_ids"?}.
/// Throws ParseError with the line number; a subset without the target or
/// with a duplicate id is a ValidationError.
std::vector<EvalQuery> parse_queries(std::istream& in);
std::vector<EvalQuery> load_queries(const std::filesystem::path& path);
void write_queries(const std::vector<EvalQuery>& queries, std::ostream& out);

/// One query per triplet, without subsets.
std::vector<EvalQuery> queries_from_triplets(const std::vector<mine::Triplet>& triplets);

/// Retrieval set: unique ids with one feature row each.
class Gallery {
 public:
  /// `features` is ids.size() x dim. Throws ValidationError on duplicate ids,
  /// a row count mismatch or a zero-norm row (naming the id).
  Gallery(std::vector<std::uint64_t> ids, nc::Tensor features);

  /// Global image features of `ids` under `model`; an id without features
  /// raises ValidationError naming it.
  static Gallery from_model(const model::TransAgg& model, std::vector<std::uint64_t> ids);

  const std::vector<std::uint64_t>& ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return features_.cols(); }
  bool contains(std::uint64_t id) const { return index_.contains(id); }
  /// Row of `id`; throws ValidationError naming an unknown id.
  std::size_t index_of(std::uint64_t id) const;
  std::span<const double> row(std::size_t i) const;
  double norm(std::size_t i) const { return norms_[i]; }

 private:
  std::vector<std::uint64_t> ids_;
  nc::Tensor features_;
  std::vector<double> norms_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

struct Ranked {
  std::uint64_t id = 0;
  double score = 0.0;

  bool operator==(const Ranked&) const = default;
};

/// Every gallery entry by descending cosine to `query`, ties by ascending id.
/// `exclude` drops one id (the reference image). Throws ValidationError on a
/// dim mismatch or a zero query.
std::vector<Ranked> rank_gallery(std::span<const double> query, const Gallery& gallery,
                                 std::optional<std::uint64_t> exclude = std::nullopt);

/// The same order restricted to `subset`, whose ids must all be in the gallery.
std::vector<Ranked> rank_subset(std::span<const double> query, const Gallery& gallery,
                                std::span<const std::uint64_t> subset);

/// 1-based position of `id`; throws ValidationError when absent.
std::size_t rank_of(const std::vector<Ranked>& ranking, std::uint64_t id);

/// Fraction of ranks <= k. Throws ValidationError for k == 0; 0 for no ranks.
double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

/// Recall@K with each query ranked only within its subset_ids.
/// `composed[i]` is the query vector of queries[i].
double recall_subset_at_k(const std::vector<EvalQuery>& queries, const std::vector<std::vector<double>>& composed,
                          const Gallery& gallery, std::size_t k);

struct RankingResult {
  std::size_t query_index = 0;
  /// Top entries of the full ranking, at most EvalOptions::keep_top.
  std::vector<Ranked> top;
  std::size_t rank_of_target = 0;
  /// 0 when the query has no subset.
  std::size_t subset_rank = 0;
};

struct EvalOptions {
  std::vector<std::size_t> ks = {1, 5, 10, 50};
  std::vector<std::size_t> subset_ks = {1, 2, 3};
  /// Drop the reference image from its own ranking.
  bool exclude_reference = true;
  std::size_t threads = 1;
  std::size_t keep_top = 10;
};

struct EvalReport {
  /// Recall@K per requested K, Recall_Subset@K when every query has a subset,
  /// and Avg = (Recall@5 + Recall_Subset@1) / 2 when both exist.
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<RankingResult> rankings;

  std::optional<double> metric(std::string_view name) const;
  nlohmann::ordered_json to_json() const;
  /// Plain-text two-column table.
  std::string table() const;
};

/// Maps a query to its composed vector. Called concurrently when threads > 1.
using QueryComposer = std::function<std::vector<double>(const EvalQuery&)>;

/// Composes each query, ranks the gallery and computes the metrics. Targets
/// and subset members must be gallery ids.
EvalReport evaluate(const QueryComposer& compose, const std::vector<EvalQuery>& queries, const Gallery& gallery,
                    const EvalOptions& options = {});

/// evaluate() with compose_query of a trained model.
EvalReport evaluate(const model::TransAgg& model, const std::vector<EvalQuery>& queries, const Gallery& gallery,
                    const EvalOptions& options = {});

}  // namespace cirforge::eval
