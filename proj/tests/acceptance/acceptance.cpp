// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cirforge/checkpoint.hpp"
#include "cirforge/embed_store.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/evaluator.hpp"
#include "cirforge/miner.hpp"
#include "cirforge/rng.hpp"
#include "cirforge/template_engine.hpp"
#include "cirforge/trainer.hpp"
#include "cirforge/transagg.hpp"
#include "json.hpp"
#include "../support/aggregation_oracle.hpp"
#include "../support/gradcheck.hpp"
#include "../support/op_cases.hpp"
#include "../support/oracles.hpp"
#include "../support/template_goldens.hpp"
#include "../support/toy_model.hpp"

using namespace cirforge;
namespace fs = std::filesystem;
using nc::Tensor;
using nc::Var;

namespace {

const fs::path kData = CIRFORGE_DATA_DIR;
const fs::path kFixtures = CIRFORGE_TEST_FIXTURES;

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records the first failure; later checks still run so the detail names it.
  void check(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& x : t.data()) x = rng.normal() * scale;
  return t;
}

std::vector<float> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

void randomize(model::TransAgg& m, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : m.params().params()) {
    Var v = p.var;
    for (auto& x : v.mutable_value().data()) x = rng.normal() * 0.3;
  }
}

std::vector<Var> trainable(const model::TransAgg& m, std::vector<std::string>& names) {
  std::vector<Var> out;
  for (const auto& p : m.params().params()) {
    if (!p.var.requires_grad()) continue;
    out.push_back(p.var);
    names.push_back(p.name);
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t entries = 0;
  for (const auto& op : testing::run_op_gradchecks()) {
    o.check(op.result.max_rel_error < 1e-4, op.name + ": " + op.result.worst);
    worst = std::max(worst, op.result.max_rel_error);
    entries += op.result.checked;
  }
  const auto cfg = testing::gradcheck_config();
  model::TransAgg m(cfg, testing::toy_images(cfg));
  randomize(m, 11);
  std::vector<std::string> names;
  const auto leaves = trainable(m, names);
  const auto batch = testing::toy_batch();
  const auto r = testing::gradcheck([&] { return testing::toy_loss(m, batch); }, leaves, names,
                                    testing::kModelFdStep);
  o.check(cfg.d == 16 && batch.size() == 4, "model check is not at d=16, B=4");
  o.check(r.max_rel_error < 1e-4, "full loss: " + r.worst);
  worst = std::max(worst, r.max_rel_error);
  entries += r.checked;
  const double secs = seconds_since(t0);
  o.check(secs < 60.0, "took " + testing::fmt_g(secs) + " s");
  if (o.pass) {
    o.detail = std::to_string(entries) + " entries, max rel error " + testing::fmt_g(worst) + ", " +
               testing::fmt_g(secs) + " s";
  }
  return o;
}

Outcome loss_identities() {
  Outcome o;
  Rng rng(6);
  const double tau = 0.01;
  const auto loss = [](const Tensor& q, const Tensor& t, double tau) {
    return model::bbc_loss(nc::constant(q), nc::constant(t), tau).value()[0];
  };
  o.check(loss(random_matrix(rng, 1, 8), random_matrix(rng, 1, 8), tau) == 0.0, "B=1 loss is not 0");

  double worst_uniform = 0.0;
  for (std::size_t B : {2, 3, 5, 7, 16, 32}) {
    const Tensor t = random_matrix(rng, 1, 8);
    Tensor T = Tensor::matrix(B, 8);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < 8; ++j) T(i, j) = t[j];
    const double err = std::fabs(loss(random_matrix(rng, B, 8), T, tau) - std::log(static_cast<double>(B)));
    worst_uniform = std::max(worst_uniform, err);
  }
  o.check(worst_uniform <= 1e-12, "uniform similarities off ln B by " + testing::fmt_g(worst_uniform));

  double worst_invariance = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 2 + rng.index(10);
    const double t = 0.05 + rng.uniform();
    const Tensor Q = random_matrix(rng, B, 8), T = random_matrix(rng, B, 8);
    const double base = loss(Q, T, t);
    std::vector<std::size_t> perm(B);
    for (std::size_t i = 0; i < B; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    Tensor Qp = Q, Tp = T, Qs = Q, Ts = T;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        Qp(i, j) = Q(perm[i], j);
        Tp(i, j) = T(perm[i], j);
      }
    const std::size_t qi = rng.index(B), ti = rng.index(B);
    const double qa = std::exp(6 * rng.uniform() - 3), ta = std::exp(6 * rng.uniform() - 3);
    for (std::size_t j = 0; j < 8; ++j) {
      Qs(qi, j) *= qa;
      Ts(ti, j) *= ta;
    }
    worst_invariance = std::max(worst_invariance, std::fabs(loss(Qp, Tp, t) - base));
    worst_invariance = std::max(worst_invariance, std::fabs(loss(Qs, Ts, t) - base));
  }
  o.check(worst_invariance <= 1e-12, "permutation/rescaling changed the loss by " + testing::fmt_g(worst_invariance));

  const Tensor e({2, 2}, {1, 0, 0, 1});
  const double orth = loss(e, e, tau);
  o.check(orth >= 0.0 && orth < 1e-40, "orthogonal B=2 loss " + testing::fmt_g(orth));
  if (o.pass) {
    o.detail = "ln B error " + testing::fmt_g(worst_uniform) + ", invariance error " +
               testing::fmt_g(worst_invariance) + ", orthogonal " + testing::fmt_g(orth);
  }
  return o;
}

Outcome aggregation_identities() {
  Outcome o;
  Rng rng(2);
  const auto vr = nc::constant(random_matrix(rng, 1, 16));
  const auto u = nc::constant(random_matrix(rng, 1, 16));
  const auto w = nc::constant(random_matrix(rng, 1, 16));
  o.check(model::combine(vr, u, w, nc::constant(Tensor({1, 3}, {1, 0, 0}))).value() == vr.value(),
          "combine with (1,0,0) is not F_Vr^G");
  o.check(model::combine(vr, u, w, nc::constant(Tensor({1, 3}, {0, 0, 1}))).value() == w.value(),
          "combine with (0,0,1) is not F_W^G");

  // Forced static weights inside a full forward pass.
  const auto scfg = testing::gradcheck_config(model::Variant::static_aggregation);
  model::TransAgg sm(scfg, testing::toy_images(scfg));
  randomize(sm, 9);
  for (const auto& [weights, pick] : {std::pair{Tensor({1, 3}, {1, 0, 0}), 0}, std::pair{Tensor({1, 3}, {0, 0, 1}), 2}}) {
    Var agg = sm.params().get("agg.static");
    agg.mutable_value() = weights;
    for (const auto& q : testing::toy_batch()) {
      const auto b = sm.forward(q.ref, q.caption);
      const auto& expect = pick == 0 ? b.F_Vr_G.value() : b.F_W_G.value();
      o.check(b.Q.value() == expect, "forced static weights do not reproduce the selected global");
    }
  }

  double worst = 0.0;
  std::size_t checked = 0;
  for (auto variant : {model::Variant::full, model::Variant::static_aggregation, model::Variant::no_fusion}) {
    const auto cfg = testing::gradcheck_config(variant);
    model::TransAgg m(cfg, testing::toy_images(cfg));
    randomize(m, 3);
    for (const auto& q : testing::toy_batch()) {
      worst = std::max(worst, testing::aggregation_error(m, m.forward(q.ref, q.caption)));
      ++checked;
    }
  }
  o.check(worst <= 1e-12, "independent recomputation differs by " + testing::fmt_g(worst));
  if (o.pass) o.detail = std::to_string(checked) + " forwards, max error " + testing::fmt_g(worst);
  return o;
}

Outcome retrieval_oracle() {
  Outcome o;
  Rng rng(31);
  std::size_t largest = 0;
  for (int trial = 0; trial < 100 && o.pass; ++trial) {
    // Every tenth trial runs at the full 10,000 entries.
    const std::size_t n = trial % 10 == 0 ? 10000 : 1 + rng.index(3000);
    const std::size_t dim = 8 + rng.index(57);
    largest = std::max(largest, n);
    embed::EmbeddingStore store(static_cast<std::uint32_t>(dim), embed::StoreKind::caption);
    std::vector<std::uint64_t> ids;
    std::vector<std::vector<float>> vecs;
    std::unordered_set<std::uint64_t> used;
    while (ids.size() < n) {
      const auto id = rng.index(1000000);
      if (!used.insert(id).second) continue;
      auto v = (!vecs.empty() && rng.uniform() < 0.1) ? vecs[rng.index(vecs.size())] : random_unit(rng, dim);
      store.add(id, v);
      ids.push_back(id);
      vecs.push_back(std::move(v));
    }
    std::unordered_set<std::uint64_t> exclude;
    const auto n_exclude = rng.index(4);
    for (std::size_t k = 0; k < n_exclude; ++k) exclude.insert(ids[rng.index(n)]);
    const auto q = random_unit(rng, dim);
    const std::size_t k = rng.uniform() < 0.2 ? n : 1 + rng.index(std::min<std::size_t>(n, 200));
    const auto got = mine::rank_by_caption(q, store, k, exclude);
    const auto oracle = testing::oracle_full_sort(q, ids, vecs, exclude);
    const auto diff = testing::compare_with_oracle(got, oracle, k);
    o.check(diff.empty(), "rank_by_caption trial " + std::to_string(trial) + ": " + diff);
  }

  for (int trial = 0; trial < 100 && o.pass; ++trial) {
    const std::size_t n = trial % 10 == 0 ? 10000 : 2 + rng.index(3000);
    const std::size_t dim = 4 + rng.index(61);
    std::vector<std::uint64_t> ids;
    std::vector<std::vector<double>> vecs;
    std::unordered_set<std::uint64_t> used;
    while (ids.size() < n) {
      const auto id = rng.index(1000000);
      if (!used.insert(id).second) continue;
      std::vector<double> v(dim);
      if (!vecs.empty() && rng.uniform() < 0.1) {
        // Positive multiples of an existing row tie with it on cosine.
        const auto& src = vecs[rng.index(vecs.size())];
        const double scale = rng.uniform() < 0.5 ? 1.0 : 2.0;
        for (std::size_t j = 0; j < dim; ++j) v[j] = src[j] * scale;
      } else {
        for (auto& x : v) x = rng.normal();
      }
      ids.push_back(id);
      vecs.push_back(std::move(v));
    }
    Tensor features = Tensor::matrix(n, dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim; ++j) features(i, j) = vecs[i][j];
    const eval::Gallery gallery(ids, std::move(features));
    std::vector<double> q(dim);
    for (auto& x : q) x = rng.normal();
    std::optional<std::uint64_t> exclude;
    if (rng.uniform() < 0.7) exclude = ids[rng.index(n)];
    const auto got = eval::rank_gallery(q, gallery, exclude);
    std::unordered_set<std::uint64_t> ex;
    if (exclude) ex.insert(*exclude);
    const auto oracle = testing::oracle_full_sort(q, ids, vecs, ex);
    const auto diff = testing::compare_with_oracle(got, oracle, oracle.size());
    o.check(diff.empty(), "rank_gallery trial " + std::to_string(trial) + ": " + diff);
  }
  if (o.pass) o.detail = "200 trials, largest store " + std::to_string(largest) + " entries";
  return o;
}

std::vector<embed::ImageRecord> demo_corpus() { return embed::load_corpus(kData / "demo_corpus.jsonl"); }

mine::MinedDataset mine_demo(const std::vector<embed::ImageRecord>& corpus, std::uint64_t seed = 0) {
  const auto store = embed::embed_corpus(corpus, 256, 0);
  const edit::Embedder embedder = [](std::string_view t) { return embed::synthetic_embed(t, 256, 0); };
  mine::MiningConfig cfg;
  cfg.seed = seed;
  return mine::mine_dataset(corpus, store, embedder, cfg);
}

Outcome template_goldens() {
  Outcome o;
  std::map<std::string, int> per_type;
  std::size_t matched = 0;
  for (const auto& g : testing::run_template_goldens(kFixtures / "template_goldens.json")) {
    const std::string where = g.type + " golden for \"" + g.caption + "\"";
    o.check(g.actual.relative_caption == g.expected_relative,
            where + ": relative \"" + g.actual.relative_caption + "\" != \"" + g.expected_relative + "\"");
    o.check(g.actual.edited_caption == g.expected_edited,
            where + ": edited \"" + g.actual.edited_caption + "\" != \"" + g.expected_edited + "\"");
    const auto type = edit::parse_edit_type(g.type);
    o.check(type && g.actual.edit_type == *type, where + ": wrong edit type");
    if (type && !edit::list_templates(*type).empty()) {
      o.check(testing::matches_exactly_one_template(*type, g.actual.relative_caption),
              where + ": relative caption does not match exactly one template");
      ++matched;
    }
    ++per_type[g.type];
  }
  o.check(per_type.size() == 8, std::to_string(per_type.size()) + " edit types have goldens");
  int fewest = 1 << 30;
  for (const auto& [type, n] : per_type) {
    o.check(n >= 3, type + " has only " + std::to_string(n) + " goldens");
    fewest = std::min(fewest, n);
  }

  // Every mined templated relative caption instantiates its table.
  std::size_t mined = 0;
  for (const auto& t : mine_demo(demo_corpus()).triplets) {
    const auto type = edit::parse_edit_type(t.edit_type);
    o.check(type.has_value(), "mined triplet with unknown type " + t.edit_type);
    if (!type || edit::list_templates(*type).empty()) continue;
    o.check(testing::matches_exactly_one_template(*type, t.relative_caption),
            "mined " + t.edit_type + " caption \"" + t.relative_caption + "\" does not match exactly one template");
    ++mined;
  }
  if (o.pass) {
    o.detail = std::to_string(per_type.size()) + " types, >= " + std::to_string(fewest) + " goldens each, " +
               std::to_string(matched) + " golden and " + std::to_string(mined) + " mined captions matched";
  }
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  std::ifstream in(kFixtures / "metric_fixture.json");
  const auto doc = nlohmann::json::parse(in);
  std::size_t metrics_checked = 0;
  for (const auto& c : doc.at("cases")) {
    const std::string name = c.at("name");
    const std::size_t dim = c.at("dim");
    std::vector<std::uint64_t> ids;
    Tensor features = Tensor::matrix(c.at("gallery").size(), dim);
    for (const auto& g : c.at("gallery")) {
      const auto row = ids.size();
      ids.push_back(g.at("id"));
      for (std::size_t j = 0; j < dim; ++j) features(row, j) = g.at("vector")[j].get<double>();
    }
    const eval::Gallery gallery(ids, std::move(features));
    std::vector<eval::EvalQuery> queries;
    std::vector<std::vector<double>> vectors;
    for (const auto& q : c.at("queries")) {
      eval::EvalQuery e;
      e.ref_id = q.at("ref_id");
      e.target_id = q.at("target_id");
      e.relative_caption = std::to_string(queries.size());
      if (q.contains("subset_ids")) e.subset_ids = q.at("subset_ids").get<std::vector<std::uint64_t>>();
      queries.push_back(std::move(e));
      vectors.push_back(q.at("vector").get<std::vector<double>>());
    }
    eval::EvalOptions opts;
    opts.ks = c.at("ks").get<std::vector<std::size_t>>();
    opts.subset_ks = c.at("subset_ks").get<std::vector<std::size_t>>();
    if (opts.subset_ks.empty()) opts.subset_ks = {1};
    const auto report = eval::evaluate(
        [&](const eval::EvalQuery& q) { return vectors[std::stoul(q.relative_caption)]; }, queries, gallery, opts);

    const auto ranks = c.at("ranks").get<std::vector<std::size_t>>();
    const auto subset_ranks = c.at("subset_ranks").get<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < queries.size(); ++i) {
      o.check(report.rankings[i].rank_of_target == ranks[i], name + " query " + std::to_string(i) + " rank");
      if (!subset_ranks.empty()) {
        o.check(report.rankings[i].subset_rank == subset_ranks[i], name + " query " + std::to_string(i) + " subset rank");
      }
    }
    for (const auto& [metric, expected] : c.at("expected").items()) {
      const auto got = report.metric(metric);
      o.check(got.has_value() && *got == expected.get<double>(),
              name + " " + metric + ": got " + (got ? testing::fmt_g(*got) : std::string("none")) + ", expected " +
                  testing::fmt_g(expected.get<double>()));
      ++metrics_checked;
    }
    o.check(report.metrics.size() == c.at("expected").size(), name + ": unexpected extra metrics");
  }

  // Hand cases.
  const std::vector<std::size_t> hand = {1, 3, 7, 12};
  o.check(eval::recall_at_k(hand, 1) == 0.25, "hand Recall@1");
  o.check(eval::recall_at_k(hand, 5) == 0.5, "hand Recall@5");
  o.check(eval::recall_at_k(hand, 12) == 1.0, "hand Recall@12");
  {
    const eval::Gallery g({1, 2, 3, 4}, Tensor({4, 2}, {1, 0, 0.8, 0.6, 0, 1, -1, 0}));
    std::vector<eval::EvalQuery> qs(3);
    qs[0] = {9, "", 1, std::vector<std::uint64_t>{1, 2}};
    qs[1] = {9, "", 3, std::vector<std::uint64_t>{2, 3, 4}};
    qs[2] = {9, "", 4, std::vector<std::uint64_t>{1, 4}};
    const std::vector<std::vector<double>> composed = {{1, 0}, {0.6, 0.8}, {-1, 0.1}};
    o.check(eval::recall_subset_at_k(qs, composed, g, 1) == 2.0 / 3.0, "hand Recall_Subset@1");
    o.check(eval::recall_subset_at_k(qs, composed, g, 2) == 1.0, "hand Recall_Subset@2");
  }

  // Monotonicity on random ranking fixtures.
  Rng rng(77);
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    const std::size_t n = 3 + rng.index(30), dim = 2 + rng.index(6);
    std::vector<std::uint64_t> gids(n);
    for (std::size_t i = 0; i < n; ++i) gids[i] = 1 + i * 3 + rng.index(3);
    const eval::Gallery g(gids, random_matrix(rng, n, dim));
    const std::size_t nq = 1 + rng.index(12);
    std::vector<eval::EvalQuery> qs;
    std::vector<std::vector<double>> vs;
    const std::size_t subset_size = std::min<std::size_t>(n - 1, 2 + rng.index(4));
    for (std::size_t i = 0; i < nq; ++i) {
      eval::EvalQuery q;
      q.ref_id = gids[rng.index(n)];
      do q.target_id = gids[rng.index(n)];
      while (q.target_id == q.ref_id);
      std::vector<std::uint64_t> others;
      for (auto id : gids)
        if (id != q.target_id && id != q.ref_id) others.push_back(id);
      rng.shuffle(std::span<std::uint64_t>(others));
      std::vector<std::uint64_t> subset(others.begin(), others.begin() + (subset_size - 1));
      subset.push_back(q.target_id);
      q.subset_ids = subset;
      q.relative_caption = std::to_string(i);
      qs.push_back(std::move(q));
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.normal();
      vs.push_back(std::move(v));
    }
    eval::EvalOptions opts;
    opts.ks.clear();
    for (std::size_t k = 1; k <= n; ++k) opts.ks.push_back(k);
    opts.subset_ks.clear();
    for (std::size_t k = 1; k <= subset_size; ++k) opts.subset_ks.push_back(k);
    const auto rep = eval::evaluate([&](const eval::EvalQuery& q) { return vs[std::stoul(q.relative_caption)]; }, qs,
                                    g, opts);
    double prev = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double r = *rep.metric("Recall@" + std::to_string(k));
      o.check(r >= prev, "Recall@K decreased at K=" + std::to_string(k) + " in fixture " + std::to_string(trial));
      prev = r;
    }
    // The reference is excluded, so every target sits within the first n - 1.
    o.check(*rep.metric("Recall@" + std::to_string(n - 1)) == 1.0, "Recall@(n-1) below 1 in fixture " + std::to_string(trial));
    prev = 0.0;
    for (std::size_t k = 1; k <= subset_size; ++k) {
      const double r = *rep.metric("Recall_Subset@" + std::to_string(k));
      o.check(r >= prev, "Recall_Subset@K decreased at K=" + std::to_string(k) + " in fixture " + std::to_string(trial));
      prev = r;
    }
    o.check(prev == 1.0, "Recall_Subset at the subset size below 1 in fixture " + std::to_string(trial));
  }
  if (o.pass) {
    o.detail = std::to_string(doc.at("cases").size()) + " fixtures, " + std::to_string(metrics_checked) +
               " metrics exact, 1000 monotone ranking fixtures";
  }
  return o;
}

struct PipelineFiles {
  fs::path triplets, checkpoint, report;
};

model::ModelConfig small_model() {
  model::ModelConfig mc;
  mc.d = 16;
  mc.heads = 4;
  mc.fusion_layers = 1;
  mc.vocab = 512;
  mc.image_tokens = 5;
  mc.feature_dim = 16;
  return mc;
}

train::TrainingConfig small_training(unsigned threads) {
  train::TrainingConfig tc;
  tc.batch_size = 16;
  tc.epochs = 2;
  tc.seed = 3;
  tc.head_lr = 3e-3;
  tc.encoder_lr = 3e-2;
  tc.threads = threads;
  return tc;
}

PipelineFiles run_pipeline(const fs::path& dir, unsigned threads) {
  fs::create_directories(dir);
  const auto corpus = demo_corpus();
  const auto mined = mine_demo(corpus, 5);
  PipelineFiles f{dir / "triplets.jsonl", dir / "model.ckpt", dir / "report.json"};
  mine::write_triplets(mined.triplets, f.triplets);
  const auto triplets = mine::load_triplets(f.triplets);
  const auto mc = small_model();
  auto images = std::make_shared<model::CaptionGridSource>(corpus, mc.image_tokens, mc.feature_dim, mc.feature_seed);
  train::train(mc, small_training(threads), triplets, images, f.checkpoint);
  const auto m = train::load_model(f.checkpoint, images);
  std::vector<std::uint64_t> ids;
  for (const auto& r : corpus) ids.push_back(r.id);
  const auto gallery = eval::Gallery::from_model(*m, ids);
  eval::EvalOptions opts;
  opts.threads = threads;
  const auto report = eval::evaluate(*m, eval::queries_from_triplets(triplets), gallery, opts);
  std::ofstream(f.report) << report.to_json().dump(2) << "\n";
  return f;
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  const auto a = run_pipeline(work / "run_a", 1);
  const auto b = run_pipeline(work / "run_b", 1);
  // Thread count is recorded in the sidecar but must not change results.
  const auto c = run_pipeline(work / "run_c", 2);
  o.check(bytes_of(a.triplets) == bytes_of(c.triplets) && bytes_of(a.checkpoint) == bytes_of(c.checkpoint) &&
              bytes_of(a.report) == bytes_of(c.report),
          "two threads changed the triplets, checkpoint or report");
  o.check(bytes_of(a.triplets) == bytes_of(b.triplets), "triplet files differ");
  o.check(bytes_of(a.checkpoint) == bytes_of(b.checkpoint), "checkpoints differ");
  o.check(bytes_of(train::sidecar_path(a.checkpoint)) == bytes_of(train::sidecar_path(b.checkpoint)),
          "checkpoint sidecars differ");
  o.check(bytes_of(a.report) == bytes_of(b.report), "reports differ");

  // Interrupt mid-epoch, resume, and compare with the uninterrupted run.
  const auto corpus = demo_corpus();
  const auto triplets = mine::load_triplets(a.triplets);
  const auto mc = small_model();
  const auto tc = small_training(1);
  auto images = std::make_shared<model::CaptionGridSource>(corpus, mc.image_tokens, mc.feature_dim, mc.feature_seed);
  const auto partial = work / "interrupted.ckpt";
  const std::uint64_t total = tc.epochs * (triplets.size() / tc.batch_size);
  const std::uint64_t stop = total / 2 + 3;
  train::TrainOptions opts;
  opts.stop_after_steps = stop;
  const auto first = train::train(mc, tc, triplets, images, partial, opts);
  o.check(first.steps == stop && !first.finished(), "interrupted run did not stop at step " + std::to_string(stop));
  const auto resumed = work / "resumed.ckpt";
  const auto rest = train::resume(partial, mc, tc, triplets, images, resumed);
  o.check(rest.finished(), "resumed run did not finish");
  o.check(bytes_of(resumed) == bytes_of(a.checkpoint), "resumed checkpoint differs from the uninterrupted run");
  o.check(bytes_of(train::sidecar_path(resumed)) == bytes_of(train::sidecar_path(a.checkpoint)),
          "resumed sidecar differs from the uninterrupted run");
  if (o.pass) {
    o.detail = std::to_string(triplets.size()) + " triplets, " + std::to_string(total) +
               " steps; interrupted at " + std::to_string(stop) + "; all bytes identical, 1 or 2 threads";
  }
  return o;
}

Outcome end_to_end(const fs::path& work) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = demo_corpus();
  auto all = mine_demo(corpus).triplets;
  o.check(corpus.size() == 500, "demo corpus has " + std::to_string(corpus.size()) + " records");
  o.check(all.size() >= 200, "mining yielded " + std::to_string(all.size()) + " triplets");
  Rng rng(7);
  rng.shuffle(std::span<mine::Triplet>(all));
  const std::size_t n_train = all.size() * 4 / 5;
  const std::vector<mine::Triplet> train_set(all.begin(), all.begin() + n_train), test_set(all.begin() + n_train, all.end());

  model::ModelConfig mc;
  mc.d = 32;
  train::TrainingConfig tc;
  tc.batch_size = 16;
  tc.epochs = 30;
  tc.head_lr = 3e-3;
  tc.encoder_lr = 3e-2;
  auto images = std::make_shared<model::CaptionGridSource>(corpus, mc.image_tokens, mc.feature_dim, mc.feature_seed);
  const auto ckpt = work / "toy.ckpt";
  const auto rep = train::train(mc, tc, train_set, images, ckpt);
  const double drop = 1.0 - rep.epoch_losses.back() / rep.epoch_losses.front();
  o.check(drop >= 0.5, "mean epoch loss fell by only " + testing::fmt_g(100 * drop) + "%");

  const auto m = train::load_model(ckpt, images);
  // R@1 over the split's distinct targets, reference excluded.
  const auto recall = [&](const std::vector<mine::Triplet>& split, double& chance) {
    std::set<std::uint64_t> targets;
    for (const auto& t : split) targets.insert(t.target_id);
    const auto gallery = eval::Gallery::from_model(*m, {targets.begin(), targets.end()});
    chance = 0.0;
    for (const auto& t : split) chance += 1.0 / static_cast<double>(targets.size() - (targets.count(t.ref_id) ? 1 : 0));
    chance /= static_cast<double>(split.size());
    eval::EvalOptions opts;
    opts.ks = {1};
    return *eval::evaluate(*m, eval::queries_from_triplets(split), gallery, opts).metric("Recall@1");
  };
  double train_chance = 0, test_chance = 0;
  const double train_r1 = recall(train_set, train_chance);
  const double test_r1 = recall(test_set, test_chance);
  const double secs = seconds_since(t0);
  o.check(train_r1 >= 0.8, "train Recall@1 " + testing::fmt_g(train_r1));
  o.check(test_r1 >= 5 * test_chance,
          "held-out Recall@1 " + testing::fmt_g(test_r1) + " < 5 x chance " + testing::fmt_g(test_chance));
  o.check(secs < 300.0, "took " + testing::fmt_g(secs) + " s");
  if (o.pass) {
    o.detail = std::to_string(all.size()) + " triplets, loss " + testing::fmt_g(rep.epoch_losses.front()) + " -> " +
               testing::fmt_g(rep.epoch_losses.back()) + ", train R@1 " + testing::fmt_g(train_r1) + ", held-out R@1 " +
               testing::fmt_g(test_r1) + " (chance " + testing::fmt_g(test_chance) + "), " + testing::fmt_g(secs) + " s";
  }
  return o;
}

template <typename E, typename F>
std::string expect_error(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  } catch (const std::exception& e) {
    return std::string("\x01wrong exception: ") + e.what();
  }
  return "\x01no exception";
}

Outcome format_round_trips(const fs::path& work) {
  Outcome o;
  const fs::path formats = kFixtures / "formats";

  for (const char* name : {"store_caption.bin", "store_image.bin"}) {
    const auto raw = bytes_of(formats / name);
    std::istringstream in(raw);
    std::ostringstream out;
    embed::write_store(embed::read_store(in), out);
    o.check(out.str() == raw, std::string(name) + " is not re-emitted byte-equal");
  }
  {
    const auto raw = bytes_of(formats / "checkpoint.bin");
    std::istringstream in(raw);
    const auto table = nc::read_checkpoint(in);
    o.check(table.size() == 3 && table[0].first == "w" && table[0].second.shape() == std::vector<std::size_t>{2, 3} &&
                table[0].second[5] == std::ldexp(1.0, 60) && table[2].second.size() == 0,
            "checkpoint.bin decoded to unexpected contents");
    std::ostringstream out;
    nc::write_checkpoint(table, out);
    o.check(out.str() == raw, "checkpoint.bin is not re-emitted byte-equal");
  }

  const auto bad_magic = expect_error<FormatError>([&] { embed::read_store(formats / "store_bad_magic.bin"); });
  o.check(bad_magic[0] != '\x01', "store with corrupted magic: " + bad_magic.substr(1));
  const auto bad_norm = expect_error<ValidationError>([&] { embed::read_store(formats / "store_bad_norm.bin"); });
  o.check(bad_norm[0] != '\x01' && bad_norm.find("42") != std::string::npos,
          "store with a bad norm: " + bad_norm + " (expected a ValidationError naming id 42)");
  const auto ckpt_magic = expect_error<FormatError>([&] { nc::read_checkpoint(formats / "checkpoint_bad_magic.bin"); });
  o.check(ckpt_magic[0] != '\x01', "checkpoint with corrupted magic: " + ckpt_magic.substr(1));

  // Engine-written files: write -> read -> write.
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 8 + rng.index(100);
    embed::EmbeddingStore s(static_cast<std::uint32_t>(dim), trial % 2 ? embed::StoreKind::image : embed::StoreKind::caption);
    const std::size_t n = rng.index(200);
    for (std::size_t i = 0; i < n; ++i) s.add(rng.next() >> 1, random_unit(rng, dim));
    const auto p1 = work / "s1.bin", p2 = work / "s2.bin";
    embed::write_store(s, p1);
    embed::write_store(embed::read_store(p1), p2);
    o.check(bytes_of(p1) == bytes_of(p2), "store trial " + std::to_string(trial) + " not byte-equal");
  }
  {
    const auto cfg = testing::gradcheck_config();
    model::TransAgg m(cfg, testing::toy_images(cfg));
    randomize(m, 4);
    const auto p1 = work / "m1.ckpt", p2 = work / "m2.ckpt";
    train::save_model(m, p1);
    nc::write_checkpoint(nc::read_checkpoint(p1), p2);
    o.check(bytes_of(p1) == bytes_of(p2), "model checkpoint not byte-equal after read/write");
    const auto p3 = work / "m3.ckpt";
    train::save_model(*train::load_model(p1, testing::toy_images(cfg)), p3);
    o.check(bytes_of(p1) == bytes_of(p3), "model checkpoint not byte-equal after load/save");
  }
  if (o.pass) o.detail = "fixtures re-emitted byte-equal; bad magic and bad norm (id 42) rejected";
  return o;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("cirforge-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"loss identities", loss_identities},
      {"aggregation identities", aggregation_identities},
      {"retrieval oracle", retrieval_oracle},
      {"template goldens", template_goldens},
      {"metric oracle", metric_oracle},
      {"determinism", [&] { return determinism(work); }},
      {"end-to-end toy experiment", [&] { return end_to_end(work); }},
      {"format round-trips", [&] { return format_round_trips(work); }},
  };

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s  %-28s %6.1f s  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  fs::remove_all(work);
  std::printf("%zu criteria, %d failed\n", criteria.size(), failures);
  return failures == 0 ? 0 : 1;
}
