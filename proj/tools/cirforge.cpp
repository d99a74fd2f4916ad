// cirforge command-line entry point.
//
// Exit codes: 0 ok, 2 invalid input (validation, parse, format or usage
// errors), 3 LLM transport failure, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cirforge/checkpoint.hpp"
#include "cirforge/embed_store.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/evaluator.hpp"
#include "cirforge/llm_client.hpp"
#include "cirforge/miner.hpp"
#include "cirforge/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cirforge;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitTransport = 3;

std::vector<std::size_t> parse_k_list(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t k = 0;
    std::size_t used = 0;
    try {
      k = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || k == 0) throw ValidationError("bad K value '" + item + "' in " + list);
    out.push_back(k);
  }
  if (out.empty()) throw ValidationError("empty K list");
  return out;
}

edit::Band parse_band(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("band must be LOW:HIGH, got " + text);
  edit::Band b;
  try {
    b.low = std::stod(text.substr(0, colon));
    b.high = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("band must be LOW:HIGH, got " + text);
  }
  if (!(b.low <= b.high)) throw ValidationError("band low exceeds high: " + text);
  return b;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_magic(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char buf[8] = {};
  in.read(buf, sizeof buf);
  return std::string(buf, static_cast<std::size_t>(in.gcount()));
}

// ---- build-corpus ---------------------------------------------------------

struct BuildCorpusArgs {
  std::string captions, out, encoder = "synthetic", import_path;
  std::uint32_t dim = 256;
  std::uint64_t seed = 0;
};

int run_build_corpus(const BuildCorpusArgs& a) {
  const auto corpus = embed::load_corpus(a.captions);
  if (a.encoder == "synthetic") {
    embed::write_store(embed::embed_corpus(corpus, a.dim, a.seed), a.out);
    std::cout << "embedded " << corpus.size() << " captions (dim " << a.dim << ") -> " << a.out << "\n";
    return 0;
  }
  if (a.import_path.empty()) throw ValidationError("--encoder import requires --import-path");
  const auto store = embed::read_store(fs::path(a.import_path));
  if (store.dim() != a.dim)
    throw ValidationError("imported store has dim " + std::to_string(store.dim()) + ", expected --dim " +
                          std::to_string(a.dim));
  for (const auto& rec : corpus)
    if (!store.contains(rec.id)) throw ValidationError("imported store has no vector for id " + std::to_string(rec.id));
  embed::write_store(store, a.out);
  std::cout << "imported " << store.size() << " vectors (dim " << store.dim() << ") -> " << a.out << "\n";
  return 0;
}

// ---- mine -----------------------------------------------------------------

struct MineArgs {
  std::string method = "template", corpus, store, out, stats, ops = "all", band = "0.5:0.7", mock;
  double threshold = 0.6;
  std::uint64_t seed = 0, embed_seed = 0;
  std::size_t targets_per_query = 1;
  int llm_retries = 2;
  unsigned threads = 1;
};

int run_mine(const MineArgs& a) {
  const auto corpus = embed::load_corpus(a.corpus);
  const auto store = embed::read_store(fs::path(a.store));
  mine::MiningConfig cfg;
  cfg.method = a.method == "llm" ? mine::Method::Llm : mine::Method::Template;
  cfg.mix = mine::parse_ops(a.ops);
  cfg.threshold = a.threshold;
  cfg.band = parse_band(a.band);
  cfg.seed = a.seed;
  cfg.targets_per_query = a.targets_per_query;
  cfg.llm_retries = a.llm_retries;
  cfg.threads = a.threads;
  const std::uint32_t dim = store.dim();
  const std::uint64_t embed_seed = a.embed_seed;
  const edit::Embedder embedder = [dim, embed_seed](std::string_view t) {
    return embed::synthetic_embed(t, dim, embed_seed);
  };

  std::unique_ptr<llm::ChatTransport> transport;
  if (cfg.method == mine::Method::Llm) {
    if (!a.mock.empty())
      transport = std::make_unique<llm::MockTransport>(llm::MockTransport::load(a.mock));
    else
      transport = std::make_unique<llm::HttpTransport>(llm::HttpConfig::from_environment());
  }
  const auto stats = mine::build_dataset(corpus, store, embedder, cfg, a.out, transport.get());
  const fs::path stats_path = a.stats.empty() ? fs::path(a.out + ".stats.json") : fs::path(a.stats);
  write_text(stats_path, stats.to_json() + "\n");
  std::cout << "mined " << stats.triplets << " triplets from " << stats.records << " records -> " << a.out << "\n"
            << "stats -> " << stats_path.string() << "\n";
  return 0;
}

// ---- shared model plumbing ---------------------------------------------------

struct ModelFlags {
  std::size_t d = 32, fusion_layers = 2, heads = 8, vocab = 4096, max_text_tokens = 32, image_tokens = 17,
              feature_dim = 64;
  std::uint64_t feature_seed = 0;
  std::string image_store;
};

std::shared_ptr<const model::ImageFeatureSource> image_source(const std::string& corpus_path,
                                                              const std::string& image_store,
                                                              model::ModelConfig& cfg) {
  if (!image_store.empty()) {
    const auto store = embed::read_store(fs::path(image_store));
    cfg.feature_dim = store.dim();
    return std::make_shared<model::StoreGridSource>(store);
  }
  if (corpus_path.empty()) throw ValidationError("--corpus or --image-store is required for image features");
  return std::make_shared<model::CaptionGridSource>(embed::load_corpus(corpus_path), cfg.image_tokens,
                                                    cfg.feature_dim, cfg.feature_seed);
}

std::vector<std::uint64_t> all_image_ids(const std::string& corpus_path, const std::string& image_store) {
  std::vector<std::uint64_t> ids;
  if (!image_store.empty()) {
    const auto store = embed::read_store(fs::path(image_store));
    ids = store.ids();
  } else {
    for (const auto& r : embed::load_corpus(corpus_path)) ids.push_back(r.id);
  }
  return ids;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string triplets, corpus, out, config, resume;
  ModelFlags model;
  train::TrainingConfig training;
  std::string finetune = "both", variant = "full";
  std::uint64_t seed = 0;
  std::uint64_t stop_after = 0;
};

int run_train(TrainArgs a, const CLI::App& cmd) {
  model::ModelConfig mc;
  train::TrainingConfig tc;
  if (!a.config.empty()) train::apply_config_file(a.config, mc, tc);
  auto given = [&](const char* flag) { return cmd.count(flag) > 0; };
  if (given("--dim")) mc.d = a.model.d;
  if (given("--layers")) mc.fusion_layers = a.model.fusion_layers;
  if (given("--heads")) mc.heads = a.model.heads;
  if (given("--vocab")) mc.vocab = a.model.vocab;
  if (given("--max-text-tokens")) mc.max_text_tokens = a.model.max_text_tokens;
  if (given("--image-tokens")) mc.image_tokens = a.model.image_tokens;
  if (given("--feature-dim")) mc.feature_dim = a.model.feature_dim;
  if (given("--feature-seed")) mc.feature_seed = a.model.feature_seed;
  if (given("--seed")) {
    tc.seed = a.seed;
    mc.init_seed = a.seed;
  }
  if (given("--batch-size")) tc.batch_size = a.training.batch_size;
  if (given("--epochs")) tc.epochs = a.training.epochs;
  if (given("--finetune")) tc.finetune = *model::parse_finetune(a.finetune);
  if (given("--variant")) tc.variant = *model::parse_variant(a.variant);
  if (given("--tau")) tc.tau = a.training.tau;
  if (given("--encoder-lr")) tc.encoder_lr = a.training.encoder_lr;
  if (given("--head-lr")) tc.head_lr = a.training.head_lr;
  if (given("--weight-decay")) tc.weight_decay = a.training.weight_decay;
  if (given("--checkpoint-interval")) tc.checkpoint_interval = a.training.checkpoint_interval;
  if (given("--threads")) tc.threads = a.training.threads;

  const auto triplets = mine::load_triplets(a.triplets);
  auto images = image_source(a.corpus, a.model.image_store, mc);
  train::TrainOptions options;
  if (a.stop_after > 0) options.stop_after_steps = a.stop_after;
  const auto report = a.resume.empty() ? train::train(mc, tc, triplets, images, a.out, options)
                                       : train::resume(a.resume, mc, tc, triplets, images, a.out, options);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.6f\n", e + 1, report.epoch_losses[e]);
    std::cout << buf;
  }
  std::cout << "steps " << report.steps << "/" << report.total_steps << "  wall " << report.wall_seconds
            << " s  checkpoint " << report.checkpoint.string() << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, queries, triplets, corpus, image_store, report, gallery = "all";
  std::string ks = "1,5,10,50", subset_ks = "1,2,3";
  std::size_t threads = 1;
  bool include_reference = false;
};

int run_eval(const EvalArgs& a) {
  auto info = train::read_checkpoint_info(a.checkpoint);
  auto images = image_source(a.corpus, a.image_store, info.model);
  const auto m = train::load_model(a.checkpoint, images);
  std::vector<eval::EvalQuery> queries;
  if (!a.queries.empty())
    queries = eval::load_queries(a.queries);
  else if (!a.triplets.empty())
    queries = eval::queries_from_triplets(mine::load_triplets(a.triplets));
  else
    throw ValidationError("eval needs --queries or --triplets");

  std::vector<std::uint64_t> ids;
  if (a.gallery == "targets") {
    std::set<std::uint64_t> seen;
    for (const auto& q : queries) {
      if (seen.insert(q.target_id).second) ids.push_back(q.target_id);
      if (q.subset_ids)
        for (auto id : *q.subset_ids)
          if (seen.insert(id).second) ids.push_back(id);
    }
  } else {
    ids = all_image_ids(a.corpus, a.image_store);
  }
  const auto gallery = eval::Gallery::from_model(*m, ids);
  eval::EvalOptions opt;
  opt.ks = parse_k_list(a.ks);
  opt.subset_ks = parse_k_list(a.subset_ks);
  opt.threads = a.threads;
  opt.exclude_reference = !a.include_reference;
  const auto rep = eval::evaluate(*m, queries, gallery, opt);
  std::cout << rep.table();
  std::cout << "queries " << queries.size() << "  gallery " << gallery.size() << "\n";
  if (!a.report.empty()) write_text(a.report, rep.to_json().dump(2) + "\n");
  return 0;
}

// ---- retrieve ---------------------------------------------------------------

struct RetrieveArgs {
  std::string checkpoint, corpus, image_store, caption;
  std::uint64_t ref_id = 0;
  std::size_t top_k = 10;
  bool include_reference = false;
};

int run_retrieve(const RetrieveArgs& a) {
  auto info = train::read_checkpoint_info(a.checkpoint);
  auto images = image_source(a.corpus, a.image_store, info.model);
  const auto m = train::load_model(a.checkpoint, images);
  const auto gallery = eval::Gallery::from_model(*m, all_image_ids(a.corpus, a.image_store));
  const auto q = m->compose_query(a.ref_id, a.caption).value();
  auto ranking =
      eval::rank_gallery(q.data(), gallery, a.include_reference ? std::nullopt : std::optional<std::uint64_t>(a.ref_id));
  std::unordered_map<std::uint64_t, std::string> captions;
  if (!a.corpus.empty())
    for (const auto& r : embed::load_corpus(a.corpus)) captions[r.id] = r.caption;
  for (std::size_t i = 0; i < std::min(a.top_k, ranking.size()); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.6f", i + 1, static_cast<unsigned long long>(ranking[i].id),
                  ranking[i].score);
    std::cout << buf;
    if (auto it = captions.find(ranking[i].id); it != captions.end()) std::cout << '\t' << it->second;
    std::cout << "\n";
  }
  return 0;
}

// ---- inspect ----------------------------------------------------------------

int run_inspect(const std::string& path) {
  const std::string magic = read_magic(path);
  nlohmann::ordered_json j;
  j["path"] = path;
  if (magic == "CIREMB01") {
    const auto store = embed::read_store(fs::path(path));
    j["type"] = "embedding_store";
    j["kind"] = store.kind() == embed::StoreKind::image ? "image" : "caption";
    j["dim"] = store.dim();
    j["count"] = store.size();
  } else if (magic == "CIRCKPT1") {
    const auto table = nc::read_checkpoint(fs::path(path));
    j["type"] = "checkpoint";
    std::size_t scalars = 0;
    nlohmann::ordered_json entries = nlohmann::ordered_json::object();
    for (const auto& [name, t] : table) {
      entries[name] = t.shape();
      scalars += t.size();
    }
    j["entries"] = table.size();
    j["scalars"] = scalars;
    if (fs::exists(train::sidecar_path(path))) {
      const auto info = train::read_checkpoint_info(path);
      j["model"] = train::to_json(info.model);
      j["training"] = train::to_json(info.training);
      j["steps"] = info.steps;
      j["total_steps"] = info.total_steps;
    }
    j["shapes"] = entries;
  } else {
    const auto triplets = mine::load_triplets(path);
    j["type"] = "triplets";
    j["count"] = triplets.size();
    std::map<std::string, std::size_t> per_type;
    for (const auto& t : triplets) ++per_type[t.edit_type];
    j["per_type"] = per_type;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cirforge: zero-shot composed image retrieval toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  BuildCorpusArgs bc;
  auto* build = app.add_subcommand("build-corpus", "Embed a caption corpus into a CIREMB01 store");
  build->add_option("--captions", bc.captions, "Corpus JSON lines {id, caption}")->required();
  build->add_option("--out", bc.out, "Output store path")->required();
  build->add_option("--encoder", bc.encoder, "synthetic or import")
      ->capture_default_str()
      ->check(CLI::IsMember({"synthetic", "import"}));
  build->add_option("--dim", bc.dim, "Embedding width")->capture_default_str();
  build->add_option("--seed", bc.seed, "Synthetic encoder seed")->capture_default_str();
  build->add_option("--import-path", bc.import_path, "Adapter-produced store to validate and re-emit");

  MineArgs ma;
  auto* minecmd = app.add_subcommand("mine", "Construct (reference, relative caption, target) triplets");
  minecmd->add_option("--method", ma.method, "template or llm")
      ->capture_default_str()
      ->check(CLI::IsMember({"template", "llm"}));
  minecmd->add_option("--corpus", ma.corpus, "Corpus JSON lines")->required();
  minecmd->add_option("--store", ma.store, "Caption embedding store of the corpus")->required();
  minecmd->add_option("--out", ma.out, "Triplet JSON lines output")->required();
  minecmd->add_option("--stats", ma.stats, "Stats JSON output (default <out>.stats.json)");
  minecmd->add_option("--threshold", ma.threshold, "Minimum target similarity")->capture_default_str();
  minecmd->add_option("--band", ma.band, "Similar-phrase band LOW:HIGH")->capture_default_str();
  minecmd->add_option("--ops", ma.ops, "Edit types: all or a comma list")->capture_default_str();
  minecmd->add_option("--seed", ma.seed, "Mining seed")->capture_default_str();
  minecmd->add_option("--embed-seed", ma.embed_seed, "Synthetic encoder seed used to build --store")
      ->capture_default_str();
  minecmd->add_option("--targets-per-query", ma.targets_per_query, "Targets kept per edit")->capture_default_str();
  minecmd->add_option("--llm-retries", ma.llm_retries, "Re-asks after an unparseable reply")->capture_default_str();
  minecmd->add_option("--threads", ma.threads, "Worker threads (output does not depend on it)")
      ->capture_default_str();
  minecmd->add_option("--mock", ma.mock, "Canned LLM responses (JSON lines) instead of the HTTP endpoint");

  TrainArgs ta;
  auto* traincmd = app.add_subcommand("train", "Train TransAgg on a triplet file");
  traincmd->add_option("--triplets", ta.triplets, "Triplet JSON lines")->required();
  traincmd->add_option("--corpus", ta.corpus, "Corpus for the synthetic image grids");
  traincmd->add_option("--image-store", ta.model.image_store, "Image-kind store of global image features");
  traincmd->add_option("--out", ta.out, "Final checkpoint path")->required();
  traincmd->add_option("--config", ta.config, "key = value file (model.*, train.*); flags override it");
  traincmd->add_option("--resume", ta.resume, "Continue the run stored in this checkpoint");
  traincmd->add_option("--stop-after", ta.stop_after, "Checkpoint and stop after this many total steps");
  traincmd->add_option("--seed", ta.seed, "Batch order and parameter init seed")->capture_default_str();
  traincmd->add_option("--dim", ta.model.d, "Model width d")->capture_default_str();
  traincmd->add_option("--layers", ta.model.fusion_layers, "Fusion transformer layers")->capture_default_str();
  traincmd->add_option("--heads", ta.model.heads, "Attention heads")->capture_default_str();
  traincmd->add_option("--vocab", ta.model.vocab, "Hashed text vocabulary")->capture_default_str();
  traincmd->add_option("--max-text-tokens", ta.model.max_text_tokens, "Text tokens incl. global")
      ->capture_default_str();
  traincmd->add_option("--image-tokens", ta.model.image_tokens, "Synthetic image grid rows")->capture_default_str();
  traincmd->add_option("--feature-dim", ta.model.feature_dim, "Synthetic image feature width")
      ->capture_default_str();
  traincmd->add_option("--feature-seed", ta.model.feature_seed, "Synthetic image feature seed")
      ->capture_default_str();
  traincmd->add_option("--batch-size", ta.training.batch_size, "Batch size B")->capture_default_str();
  traincmd->add_option("--epochs", ta.training.epochs, "Epochs")->capture_default_str();
  traincmd->add_option("--finetune", ta.finetune, "freeze, text_only or both")
      ->capture_default_str()
      ->check(CLI::IsMember({"freeze", "text_only", "both"}));
  traincmd->add_option("--variant", ta.variant, "full, no_fusion or static_aggregation")
      ->capture_default_str()
      ->check(CLI::IsMember({"full", "no_fusion", "static_aggregation"}));
  traincmd->add_option("--tau", ta.training.tau, "Softmax temperature")->capture_default_str();
  traincmd->add_option("--encoder-lr", ta.training.encoder_lr, "Encoder base learning rate")->capture_default_str();
  traincmd->add_option("--head-lr", ta.training.head_lr, "Fusion/aggregation base learning rate")
      ->capture_default_str();
  traincmd->add_option("--weight-decay", ta.training.weight_decay, "Decoupled weight decay")->capture_default_str();
  traincmd->add_option("--checkpoint-interval", ta.training.checkpoint_interval, "Steps between checkpoints, 0 = end only")
      ->capture_default_str();
  traincmd->add_option("--threads", ta.training.threads, "Query composition workers")->capture_default_str();

  EvalArgs ea;
  auto* evalcmd = app.add_subcommand("eval", "Recall@K and Recall_Subset@K of a checkpoint");
  evalcmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint path")->required();
  evalcmd->add_option("--queries", ea.queries, "Query JSON lines {ref_id, relative_caption, target_id, subset_ids?}");
  evalcmd->add_option("--triplets", ea.triplets, "Use triplets as queries instead");
  evalcmd->add_option("--corpus", ea.corpus, "Corpus for the synthetic image grids");
  evalcmd->add_option("--image-store", ea.image_store, "Image-kind store of global image features");
  evalcmd->add_option("--gallery", ea.gallery, "all images, or only the queries' targets and subsets")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "targets"}));
  evalcmd->add_option("--k", ea.ks, "Recall@K list")->capture_default_str();
  evalcmd->add_option("--subset-k", ea.subset_ks, "Recall_Subset@K list")->capture_default_str();
  evalcmd->add_option("--report", ea.report, "Write the metrics as JSON");
  evalcmd->add_option("--threads", ea.threads, "Query workers")->capture_default_str();
  evalcmd->add_flag("--include-reference", ea.include_reference, "Keep the reference image in its own ranking");

  RetrieveArgs ra;
  auto* retrieve = app.add_subcommand("retrieve", "Top-k gallery images for one composed query");
  retrieve->add_option("--checkpoint", ra.checkpoint, "Checkpoint path")->required();
  retrieve->add_option("--corpus", ra.corpus, "Corpus for image grids and captions");
  retrieve->add_option("--image-store", ra.image_store, "Image-kind store of global image features");
  retrieve->add_option("--ref-id", ra.ref_id, "Reference image id")->required();
  retrieve->add_option("--caption", ra.caption, "Relative caption")->required();
  retrieve->add_option("--top-k", ra.top_k, "Results to print")->capture_default_str();
  retrieve->add_flag("--include-reference", ra.include_reference, "Allow the reference image in the results");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Summarize a store, checkpoint or triplet file as JSON");
  inspect->add_option("path", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*build) return run_build_corpus(bc);
    if (*minecmd) return run_mine(ma);
    if (*traincmd) return run_train(ta, *traincmd);
    if (*evalcmd) return run_eval(ea);
    if (*retrieve) return run_retrieve(ra);
    if (*inspect) return run_inspect(inspect_path);
  } catch (const TransportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
