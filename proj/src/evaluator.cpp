#include "cirforge/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <thread>

#include "cirforge/errors.hpp"
#include "cirforge/text.hpp"

namespace cirforge::eval {

namespace {

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool before(const Ranked& a, const Ranked& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; }

double query_norm(std::span<const double> query, const Gallery& gallery) {
  if (query.size() != gallery.dim())
    throw ValidationError("query dim " + std::to_string(query.size()) + " does not match gallery dim " +
                          std::to_string(gallery.dim()));
  const double n = l2(query);
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("query vector has zero or non-finite norm");
  return n;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<EvalQuery> parse_queries(std::istream& in) {
  std::vector<EvalQuery> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    EvalQuery q;
    try {
      q.ref_id = j.at("ref_id").get<std::uint64_t>();
      q.relative_caption = j.at("relative_caption").get<std::string>();
      q.target_id = j.at("target_id").get<std::uint64_t>();
      if (j.contains("subset_ids")) q.subset_ids = j.at("subset_ids").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad query: ") + e.what(), line_no);
    }
    if (q.subset_ids) {
      const std::set<std::uint64_t> unique(q.subset_ids->begin(), q.subset_ids->end());
      if (unique.size() != q.subset_ids->size())
        throw ValidationError("line " + std::to_string(line_no) + ": duplicate id in subset_ids");
      if (!unique.contains(q.target_id))
        throw ValidationError("line " + std::to_string(line_no) + ": subset_ids does not contain target_id " +
                              std::to_string(q.target_id));
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<EvalQuery> load_queries(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_queries(in);
}

void write_queries(const std::vector<EvalQuery>& queries, std::ostream& out) {
  for (const auto& q : queries) {
    nlohmann::ordered_json j;
    j["ref_id"] = q.ref_id;
    j["relative_caption"] = q.relative_caption;
    j["target_id"] = q.target_id;
    if (q.subset_ids) j["subset_ids"] = *q.subset_ids;
    out << j.dump() << '\n';
  }
}

std::vector<EvalQuery> queries_from_triplets(const std::vector<mine::Triplet>& triplets) {
  std::vector<EvalQuery> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back({t.ref_id, t.relative_caption, t.target_id, std::nullopt});
  return out;
}

Gallery::Gallery(std::vector<std::uint64_t> ids, nc::Tensor features)
    : ids_(std::move(ids)), features_(std::move(features)) {
  if (features_.rank() != 2 || features_.rows() != ids_.size())
    throw ValidationError("gallery has " + std::to_string(ids_.size()) + " ids but a feature matrix of shape " +
                          features_.shape_string());
  norms_.resize(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second)
      throw ValidationError("duplicate gallery id " + std::to_string(ids_[i]));
    norms_[i] = l2(row(i));
    if (!(norms_[i] > 0.0) || !std::isfinite(norms_[i]))
      throw ValidationError("gallery feature of id " + std::to_string(ids_[i]) + " has zero or non-finite norm");
  }
}

Gallery Gallery::from_model(const model::TransAgg& model, std::vector<std::uint64_t> ids) {
  nc::Tensor features = ids.empty() ? nc::Tensor::matrix(0, model.config().d) : model.image_globals(ids).value();
  return Gallery(std::move(ids), std::move(features));
}

std::size_t Gallery::index_of(std::uint64_t id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("id " + std::to_string(id) + " is not in the gallery");
  return it->second;
}

std::span<const double> Gallery::row(std::size_t i) const {
  return std::span<const double>(features_.data()).subspan(i * dim(), dim());
}

std::vector<Ranked> rank_gallery(std::span<const double> query, const Gallery& gallery,
                                 std::optional<std::uint64_t> exclude) {
  const double qn = query_norm(query, gallery);
  std::vector<Ranked> out;
  out.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto id = gallery.ids()[i];
    if (exclude && id == *exclude) continue;
    out.push_back({id, dot(query, gallery.row(i)) / (qn * gallery.norm(i))});
  }
  std::sort(out.begin(), out.end(), before);
  return out;
}

std::vector<Ranked> rank_subset(std::span<const double> query, const Gallery& gallery,
                                std::span<const std::uint64_t> subset) {
  const double qn = query_norm(query, gallery);
  std::vector<Ranked> out;
  out.reserve(subset.size());
  for (auto id : subset) {
    const auto i = gallery.index_of(id);
    out.push_back({id, dot(query, gallery.row(i)) / (qn * gallery.norm(i))});
  }
  std::sort(out.begin(), out.end(), before);
  return out;
}

std::size_t rank_of(const std::vector<Ranked>& ranking, std::uint64_t id) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].id == id) return i + 1;
  throw ValidationError("id " + std::to_string(id) + " is not in the ranking");
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (k == 0) throw ValidationError("recall K must be at least 1");
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto r : ranks) hits += (r >= 1 && r <= k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double recall_subset_at_k(const std::vector<EvalQuery>& queries, const std::vector<std::vector<double>>& composed,
                          const Gallery& gallery, std::size_t k) {
  if (composed.size() != queries.size()) throw ValidationError("one composed vector per query is required");
  std::vector<std::size_t> ranks;
  ranks.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (!queries[i].subset_ids) throw ValidationError("query " + std::to_string(i) + " has no subset_ids");
    ranks.push_back(rank_of(rank_subset(composed[i], gallery, *queries[i].subset_ids), queries[i].target_id));
  }
  return recall_at_k(ranks, k);
}

std::optional<double> EvalReport::metric(std::string_view name) const {
  for (const auto& [n, v] : metrics)
    if (n == name) return v;
  return std::nullopt;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [n, v] : metrics) j[n] = v;
  return j;
}

std::string EvalReport::table() const {
  std::size_t width = 6;
  for (const auto& [n, v] : metrics) width = std::max(width, n.size());
  std::string out = "metric" + std::string(width - 6 + 2, ' ') + "value\n";
  for (const auto& [n, v] : metrics) out += n + std::string(width - n.size() + 2, ' ') + format_value(v) + '\n';
  return out;
}

EvalReport evaluate(const QueryComposer& compose, const std::vector<EvalQuery>& queries, const Gallery& gallery,
                    const EvalOptions& options) {
  for (auto k : options.ks)
    if (k == 0) throw ValidationError("recall K must be at least 1");
  for (auto k : options.subset_ks)
    if (k == 0) throw ValidationError("recall K must be at least 1");
  std::size_t with_subset = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    if (!gallery.contains(q.target_id))
      throw ValidationError("query " + std::to_string(i) + ": target id " + std::to_string(q.target_id) +
                            " is not in the gallery");
    if (options.exclude_reference && q.ref_id == q.target_id)
      throw ValidationError("query " + std::to_string(i) + ": reference and target are the same image");
    if (q.subset_ids) {
      ++with_subset;
      for (auto id : *q.subset_ids)
        if (!gallery.contains(id))
          throw ValidationError("query " + std::to_string(i) + ": subset id " + std::to_string(id) +
                                " is not in the gallery");
    }
  }
  if (with_subset != 0 && with_subset != queries.size())
    throw ValidationError("either every query or none must carry subset_ids");

  EvalReport report;
  report.rankings.resize(queries.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, queries.size()));
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < queries.size(); i += workers) {
      const auto& q = queries[i];
      const auto vec = compose(q);
      auto ranking =
          rank_gallery(vec, gallery, options.exclude_reference ? std::optional<std::uint64_t>(q.ref_id) : std::nullopt);
      RankingResult& r = report.rankings[i];
      r.query_index = i;
      r.rank_of_target = rank_of(ranking, q.target_id);
      if (q.subset_ids) r.subset_rank = rank_of(rank_subset(vec, gallery, *q.subset_ids), q.target_id);
      ranking.resize(std::min(ranking.size(), options.keep_top));
      r.top = std::move(ranking);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  std::vector<std::size_t> ranks, subset_ranks;
  for (const auto& r : report.rankings) {
    ranks.push_back(r.rank_of_target);
    subset_ranks.push_back(r.subset_rank);
  }
  for (auto k : options.ks) report.metrics.emplace_back("Recall@" + std::to_string(k), recall_at_k(ranks, k));
  if (with_subset > 0) {
    for (auto k : options.subset_ks)
      report.metrics.emplace_back("Recall_Subset@" + std::to_string(k), recall_at_k(subset_ranks, k));
  }
  const auto r5 = report.metric("Recall@5");
  const auto rs1 = report.metric("Recall_Subset@1");
  if (r5 && rs1) report.metrics.emplace_back("Avg", (*r5 + *rs1) / 2.0);
  return report;
}

EvalReport evaluate(const model::TransAgg& model, const std::vector<EvalQuery>& queries, const Gallery& gallery,
                    const EvalOptions& options) {
  return evaluate([&](const EvalQuery& q) { return model.compose_query(q.ref_id, q.relative_caption).value().data(); },
                  queries, gallery, options);
}

}  // namespace cirforge::eval
