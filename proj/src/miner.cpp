#include "cirforge/miner.hpp"

#include <algorithm>
#include <exception>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "cirforge/errors.hpp"
#include "cirforge/text.hpp"

namespace cirforge::mine {

namespace {

bool hit_before(const Hit& a, const Hit& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

enum class Outcome { Emitted, NotApplicable, BelowThreshold, ParseFailure };

struct RecordResult {
  std::string tag;
  Outcome outcome = Outcome::NotApplicable;
  std::vector<Triplet> triplets;
};

edit::EditType sample_type(const std::array<double, 8>& mix, double total, Rng& rng) {
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    if (mix[i] <= 0.0) continue;
    acc += mix[i];
    last = i;
    if (u < acc) return edit::kAllEditTypes[i];
  }
  return edit::kAllEditTypes[last];
}

}  // namespace

std::vector<Hit> rank_by_caption(std::span<const float> query, const embed::EmbeddingStore& store,
                                 std::size_t top_k, const std::unordered_set<std::uint64_t>& exclude) {
  if (query.size() != store.dim()) {
    throw ValidationError("query has dim " + std::to_string(query.size()) + ", store has dim " +
                          std::to_string(store.dim()));
  }
  std::vector<Hit> hits;
  hits.reserve(store.size());
  for (std::size_t r = 0; r < store.size(); ++r) {
    const auto id = store.id_at(r);
    if (exclude.contains(id)) continue;
    hits.push_back({id, embed::cosine(query, store.row(r))});
  }
  const std::size_t k = std::min(top_k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), hit_before);
  hits.resize(k);
  return hits;
}

CaptionIndex::CaptionIndex(const std::vector<embed::ImageRecord>& corpus, const embed::EmbeddingStore& store)
    : store_(&store) {
  for (const auto& rec : corpus) {
    if (!store.contains(rec.id)) {
      throw ValidationError("corpus id " + std::to_string(rec.id) + " has no vector in the caption store");
    }
    captions_.emplace(rec.id, rec.caption);
    by_caption_[rec.caption].push_back(rec.id);
  }
}

const std::string& CaptionIndex::caption(std::uint64_t id) const {
  auto it = captions_.find(id);
  if (it == captions_.end()) throw ValidationError("unknown corpus id " + std::to_string(id));
  return it->second;
}

std::span<const std::uint64_t> CaptionIndex::ids_with_caption(const std::string& caption) const {
  auto it = by_caption_.find(caption);
  if (it == by_caption_.end()) return {};
  return it->second;
}

std::vector<Triplet> mine_targets(const embed::ImageRecord& ref, std::string_view relative_caption,
                                  std::string_view edited_caption, std::string_view edit_type,
                                  const CaptionIndex& index, const edit::Embedder& embedder, double threshold,
                                  std::size_t max_targets) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  std::unordered_set<std::uint64_t> exclude{ref.id};
  for (auto id : index.ids_with_caption(ref.caption)) exclude.insert(id);
  const auto query = embedder(edited_caption);
  std::vector<Triplet> out;
  for (const Hit& h : rank_by_caption(query, index.store(), max_targets, exclude)) {
    if (h.similarity < threshold) break;
    out.push_back({ref.id, h.id, std::string(relative_caption), std::string(edit_type), h.similarity});
  }
  return out;
}

std::optional<Triplet> mine_triplet(const embed::ImageRecord& ref, const edit::EditResult& edit,
                                    const CaptionIndex& index, const edit::Embedder& embedder, double threshold) {
  auto t = mine_targets(ref, edit.relative_caption, edit.edited_caption, edit::edit_type_name(edit.edit_type), index,
                        embedder, threshold, 1);
  if (t.empty()) return std::nullopt;
  return std::move(t.front());
}

std::optional<Triplet> mine_triplet(const embed::ImageRecord& ref, const llm::LlmEdit& edit,
                                    const CaptionIndex& index, const edit::Embedder& embedder, double threshold) {
  auto t = mine_targets(ref, edit.instruction, edit.edited_description, kLlmTag, index, embedder, threshold, 1);
  if (t.empty()) return std::nullopt;
  return std::move(t.front());
}

std::optional<std::string> sample_direct_target(const embed::ImageRecord& ref, const CaptionIndex& index,
                                                edit::Band band, Rng& rng) {
  const auto& store = index.store();
  const auto ref_vec = store.vector(ref.id);
  std::vector<std::uint64_t> candidates;
  for (std::size_t r = 0; r < store.size(); ++r) {
    const auto id = store.id_at(r);
    if (id == ref.id) continue;
    const double s = embed::cosine(ref_vec, store.row(r));
    if (s < band.low || s > band.high) continue;
    const std::string& caption = index.caption(id);
    if (caption == ref.caption) continue;
    candidates.push_back(id);
  }
  if (candidates.empty()) return std::nullopt;
  return index.caption(candidates[rng.index(candidates.size())]);
}

std::string DatasetStats::to_json() const {
  nlohmann::ordered_json j;
  j["records"] = records;
  j["triplets"] = triplets;
  j["llm_parse_failures"] = llm_parse_failures;
  nlohmann::ordered_json types = nlohmann::ordered_json::object();
  for (const auto& [tag, s] : per_type) {
    types[tag] = {{"attempted", s.attempted},
                  {"not_applicable", s.not_applicable},
                  {"below_threshold", s.below_threshold},
                  {"emitted", s.emitted}};
  }
  j["per_type"] = types;
  return j.dump(2);
}

MinedDataset mine_dataset(const std::vector<embed::ImageRecord>& corpus, const embed::EmbeddingStore& store,
                          const edit::Embedder& embedder, const MiningConfig& config, llm::ChatTransport* transport) {
  if (!(config.threshold > 0.0 && config.threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  if (!(config.band.low < config.band.high)) throw ValidationError("band low must be below band high");
  if (config.targets_per_query == 0) throw ValidationError("targets_per_query must be positive");
  double total = 0.0;
  for (double w : config.mix) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("edit-type weights must be finite and non-negative");
    total += w;
  }
  if (config.method == Method::Template && total <= 0.0) throw ValidationError("edit-type weights are all zero");
  if (config.method == Method::Llm && transport == nullptr) throw ValidationError("llm method needs a transport");

  const CaptionIndex index(corpus, store);

  std::vector<const embed::ImageRecord*> order;
  order.reserve(corpus.size());
  for (const auto& r : corpus) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });

  std::optional<edit::PhrasePool> pool;
  if (config.method == Method::Template) {
    std::vector<std::string> captions;
    captions.reserve(order.size());
    for (auto* r : order) captions.push_back(r->caption);
    pool = edit::PhrasePool::from_captions(captions, chunk::Lexicon::builtin(), embedder);
  }
  edit::EditEnvironment env;
  env.embedder = embedder;
  env.pool = pool ? &*pool : nullptr;
  env.band = config.band;

  auto process = [&](const embed::ImageRecord& rec) {
    RecordResult res;
    Rng rng(derive_seed(config.seed, rec.id));
    std::string relative;
    std::string edited;
    if (config.method == Method::Llm) {
      res.tag = std::string(kLlmTag);
      try {
        auto e = llm::generate_llm_edit(rec.caption, *transport, config.llm_retries);
        relative = std::move(e.instruction);
        edited = std::move(e.edited_description);
      } catch (const llm::ResponseError&) {
        res.outcome = Outcome::ParseFailure;
        return res;
      }
    } else {
      const auto type = sample_type(config.mix, total, rng);
      res.tag = std::string(edit::edit_type_name(type));
      try {
        auto direct = [&](Rng& r) { return sample_direct_target(rec, index, config.band, r); };
        auto e = edit::apply_edit(type, rec.caption, env, rng, direct);
        relative = std::move(e.relative_caption);
        edited = std::move(e.edited_caption);
      } catch (const edit::NotApplicable&) {
        res.outcome = Outcome::NotApplicable;
        return res;
      }
    }
    res.triplets = mine_targets(rec, relative, edited, res.tag, index, embedder, config.threshold,
                                config.targets_per_query);
    res.outcome = res.triplets.empty() ? Outcome::BelowThreshold : Outcome::Emitted;
    return res;
  };

  std::vector<RecordResult> results(order.size());
  const unsigned threads = std::max(1u, std::min<unsigned>(config.threads, static_cast<unsigned>(order.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < order.size(); ++i) results[i] = process(*order[i]);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> workers;
    for (unsigned t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < order.size(); i += threads) results[i] = process(*order[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  MinedDataset out;
  out.stats.records = order.size();
  if (config.method == Method::Template) {
    for (std::size_t i = 0; i < config.mix.size(); ++i) {
      if (config.mix[i] > 0.0) out.stats.per_type[std::string(edit::edit_type_name(edit::kAllEditTypes[i]))];
    }
  } else {
    out.stats.per_type[std::string(kLlmTag)];
  }
  for (auto& r : results) {
    auto& s = out.stats.per_type[r.tag];
    ++s.attempted;
    switch (r.outcome) {
      case Outcome::Emitted: ++s.emitted; break;
      case Outcome::NotApplicable: ++s.not_applicable; break;
      case Outcome::BelowThreshold: ++s.below_threshold; break;
      case Outcome::ParseFailure: ++out.stats.llm_parse_failures; break;
    }
    for (auto& t : r.triplets) out.triplets.push_back(std::move(t));
  }
  out.stats.triplets = out.triplets.size();
  return out;
}

DatasetStats build_dataset(const std::vector<embed::ImageRecord>& corpus, const embed::EmbeddingStore& store,
                           const edit::Embedder& embedder, const MiningConfig& config,
                           const std::filesystem::path& out_path, llm::ChatTransport* transport) {
  auto mined = mine_dataset(corpus, store, embedder, config, transport);
  write_triplets(mined.triplets, out_path);
  return mined.stats;
}

void write_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : triplets) {
    nlohmann::ordered_json j;
    j["ref_id"] = t.ref_id;
    j["target_id"] = t.target_id;
    j["relative_caption"] = t.relative_caption;
    j["edit_type"] = t.edit_type;
    j["mining_similarity"] = t.mining_similarity;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Triplet> parse_triplets(std::istream& in) {
  std::vector<Triplet> out;
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
    try {
      Triplet t;
      t.ref_id = j.at("ref_id").get<std::uint64_t>();
      t.target_id = j.at("target_id").get<std::uint64_t>();
      t.relative_caption = j.at("relative_caption").get<std::string>();
      t.edit_type = j.at("edit_type").get<std::string>();
      t.mining_similarity = j.at("mining_similarity").get<double>();
      if (t.ref_id == t.target_id) {
        throw ValidationError("line " + std::to_string(line_no) + ": ref_id equals target_id");
      }
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad triplet: ") + e.what(), line_no);
    }
  }
  return out;
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_triplets(in);
}

std::array<double, 8> parse_ops(std::string_view list) {
  std::array<double, 8> mix{};
  if (trim(list) == "all") {
    mix.fill(1.0);
    return mix;
  }
  std::size_t pos = 0;
  while (pos <= list.size()) {
    std::size_t end = list.find(',', pos);
    if (end == std::string_view::npos) end = list.size();
    const auto name = trim(list.substr(pos, end - pos));
    const auto type = edit::parse_edit_type(name);
    if (!type) throw ValidationError("unknown edit type '" + std::string(name) + "'");
    mix[static_cast<std::size_t>(*type)] = 1.0;
    pos = end + 1;
  }
  return mix;
}

}  // namespace cirforge::mine
