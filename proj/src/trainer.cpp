#include "cirforge/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <thread>

#include "cirforge/checkpoint.hpp"
#include "cirforge/optim.hpp"
#include "cirforge/rng.hpp"
#include "cirforge/text.hpp"

namespace cirforge::train {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kSidecarFormat = "cirforge-checkpoint/1";
constexpr std::string_view kStepEntry = "trainer.step";
constexpr std::string_view kLossesEntry = "trainer.step_losses";

template <typename T>
T field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw FormatError(std::string("checkpoint sidecar: missing field ") + name);
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("checkpoint sidecar: bad field ") + name);
  }
}

template <typename E, typename Parse>
E enum_field(const json& j, const char* name, Parse parse) {
  const auto v = parse(field<std::string>(j, name));
  if (!v) throw FormatError(std::string("checkpoint sidecar: bad field ") + name);
  return *v;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.size() != 16)
    throw FormatError("checkpoint sidecar: bad field triplets_hash");
  return v;
}

template <typename T>
T parse_number(const std::string& value, std::size_t line, const std::string& key) {
  T v{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ParseError("bad value for " + key + ": '" + value + "'", line);
  return v;
}

nc::AdamWConfig adam_config(const TrainingConfig& t) {
  nc::AdamWConfig c;
  c.encoder_lr = t.encoder_lr;
  c.head_lr = t.head_lr;
  c.weight_decay = t.weight_decay;
  return c;
}

void check_ids(const std::vector<mine::Triplet>& triplets, const model::ImageFeatureSource& images) {
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    for (auto id : {triplets[i].ref_id, triplets[i].target_id}) {
      if (!images.contains(id))
        throw ValidationError("triplet " + std::to_string(i) + ": no image features for id " + std::to_string(id));
    }
  }
}

struct RunState {
  std::uint64_t step = 0;
  std::vector<double> step_losses;
};

std::vector<double> epoch_means(const std::vector<double>& losses, std::size_t per_epoch) {
  std::vector<double> out;
  for (std::size_t e = 0; per_epoch > 0 && (e + 1) * per_epoch <= losses.size(); ++e) {
    double s = 0.0;
    for (std::size_t i = e * per_epoch; i < (e + 1) * per_epoch; ++i) s += losses[i];
    out.push_back(s / static_cast<double>(per_epoch));
  }
  return out;
}

void write_sidecar(const std::filesystem::path& checkpoint, const model::ModelConfig& model,
                   const TrainingConfig& training, std::uint64_t steps, std::uint64_t total_steps,
                   std::uint64_t triplets_hash, const std::vector<double>& epoch_losses) {
  ordered_json side;
  side["format"] = kSidecarFormat;
  side["model"] = to_json(model);
  side["training"] = to_json(training);
  side["steps"] = steps;
  side["total_steps"] = total_steps;
  side["triplets_hash"] = hex64(triplets_hash);
  side["epoch_losses"] = epoch_losses;
  const auto path = sidecar_path(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << side.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_run(const model::TransAgg& m, const nc::AdamW& opt, const RunState& state, const TrainingConfig& training,
               std::uint64_t total_steps, std::uint64_t triplets_hash, std::size_t per_epoch,
               const std::filesystem::path& path) {
  nc::TensorTable table = m.export_params();
  for (auto& entry : opt.export_state(m.params())) table.push_back(std::move(entry));
  table.emplace_back(std::string(kStepEntry), nc::Tensor({1}, {static_cast<double>(state.step)}));
  table.emplace_back(std::string(kLossesEntry), nc::Tensor({state.step_losses.size()}, state.step_losses));
  nc::write_checkpoint(table, path);

  write_sidecar(path, m.config(), training, state.step, total_steps, triplets_hash,
                epoch_means(state.step_losses, per_epoch));
}

nc::Var batch_loss(const model::TransAgg& m, const std::vector<mine::Triplet>& triplets,
                   const std::vector<std::size_t>& batch, const TrainingConfig& training) {
  std::vector<nc::Var> queries(batch.size());
  std::vector<std::uint64_t> targets(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) targets[i] = triplets[batch[i]].target_id;
  const std::size_t workers = std::min(training.threads, batch.size());
  auto compose = [&](std::size_t w) {
    for (std::size_t i = w; i < batch.size(); i += workers) {
      const auto& t = triplets[batch[i]];
      queries[i] = m.compose_query(t.ref_id, t.relative_caption);
    }
  };
  if (workers <= 1) {
    compose(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(compose, w);
  }
  return model::bbc_loss(nc::concat(queries, 0), m.image_globals(targets), training.tau);
}

TrainReport run(model::TransAgg& m, nc::AdamW& opt, RunState state, const TrainingConfig& training,
                const std::vector<mine::Triplet>& triplets, const std::filesystem::path& out,
                const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t per_epoch = triplets.size() / training.batch_size;
  const std::uint64_t total = static_cast<std::uint64_t>(per_epoch) * training.epochs;
  const std::uint64_t hash = hash_triplets(triplets);

  TrainReport report;
  report.total_steps = total;
  if (training.batch_size == 1) report.warnings.push_back("batch_size 1: the loss is identically zero");

  while (state.step < total) {
    if (options.stop_after_steps && state.step >= *options.stop_after_steps) break;
    const std::size_t epoch = state.step / per_epoch;
    const auto batches = make_batches(triplets.size(), training.batch_size, training.seed, epoch);
    for (std::size_t b = state.step % per_epoch; b < per_epoch; ++b) {
      if (options.stop_after_steps && state.step >= *options.stop_after_steps) break;
      m.params().zero_grad();
      const nc::Var loss = batch_loss(m, triplets, batches[b], training);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) throw NonFiniteLoss(state.step);
      nc::backward(loss);
      opt.step(m.params(), static_cast<double>(state.step) / static_cast<double>(total));
      state.step_losses.push_back(value);
      ++state.step;
      if (training.checkpoint_interval > 0 && state.step % training.checkpoint_interval == 0 && state.step < total) {
        auto path = out;
        path += ".step" + std::to_string(state.step);
        write_run(m, opt, state, training, total, hash, per_epoch, path);
      }
    }
  }
  write_run(m, opt, state, training, total, hash, per_epoch, out);

  report.steps = state.step;
  report.step_losses = state.step_losses;
  report.epoch_losses = epoch_means(state.step_losses, per_epoch);
  report.checkpoint = out;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void check_trainable_size(const std::vector<mine::Triplet>& triplets, const TrainingConfig& training) {
  if (triplets.empty()) throw ValidationError("no training triplets");
  if (triplets.size() < training.batch_size)
    throw ValidationError("batch_size " + std::to_string(training.batch_size) + " exceeds the " +
                          std::to_string(triplets.size()) + " training triplets");
}

}  // namespace

void TrainingConfig::validate() const {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("tau must be positive");
  if (!(encoder_lr >= 0.0) || !(head_lr >= 0.0)) throw ValidationError("learning rates must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be nonnegative");
  if (threads == 0) throw ValidationError("threads must be positive");
}

std::optional<std::string> TrainingConfig::first_difference(const TrainingConfig& o) const {
  if (batch_size != o.batch_size) return "batch_size";
  if (epochs != o.epochs) return "epochs";
  if (seed != o.seed) return "seed";
  if (finetune != o.finetune) return "finetune";
  if (variant != o.variant) return "variant";
  if (tau != o.tau) return "tau";
  if (encoder_lr != o.encoder_lr) return "encoder_lr";
  if (head_lr != o.head_lr) return "head_lr";
  if (weight_decay != o.weight_decay) return "weight_decay";
  return std::nullopt;
}

ordered_json to_json(const model::ModelConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["fusion_layers"] = c.fusion_layers;
  j["heads"] = c.heads;
  j["variant"] = model::variant_name(c.variant);
  j["finetune"] = model::finetune_name(c.finetune);
  j["vocab"] = c.vocab;
  j["max_text_tokens"] = c.max_text_tokens;
  j["image_tokens"] = c.image_tokens;
  j["feature_dim"] = c.feature_dim;
  j["feature_seed"] = c.feature_seed;
  j["init_seed"] = c.init_seed;
  return j;
}

ordered_json to_json(const TrainingConfig& c) {
  ordered_json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["finetune"] = model::finetune_name(c.finetune);
  j["variant"] = model::variant_name(c.variant);
  j["tau"] = c.tau;
  j["encoder_lr"] = c.encoder_lr;
  j["head_lr"] = c.head_lr;
  j["weight_decay"] = c.weight_decay;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["threads"] = c.threads;
  return j;
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  c.d = field<std::size_t>(j, "d");
  c.fusion_layers = field<std::size_t>(j, "fusion_layers");
  c.heads = field<std::size_t>(j, "heads");
  c.variant = enum_field<model::Variant>(j, "variant", model::parse_variant);
  c.finetune = enum_field<model::Finetune>(j, "finetune", model::parse_finetune);
  c.vocab = field<std::size_t>(j, "vocab");
  c.max_text_tokens = field<std::size_t>(j, "max_text_tokens");
  c.image_tokens = field<std::size_t>(j, "image_tokens");
  c.feature_dim = field<std::size_t>(j, "feature_dim");
  c.feature_seed = field<std::uint64_t>(j, "feature_seed");
  c.init_seed = field<std::uint64_t>(j, "init_seed");
  return c;
}

TrainingConfig training_config_from_json(const json& j) {
  TrainingConfig c;
  c.batch_size = field<std::size_t>(j, "batch_size");
  c.epochs = field<std::size_t>(j, "epochs");
  c.seed = field<std::uint64_t>(j, "seed");
  c.finetune = enum_field<model::Finetune>(j, "finetune", model::parse_finetune);
  c.variant = enum_field<model::Variant>(j, "variant", model::parse_variant);
  c.tau = field<double>(j, "tau");
  c.encoder_lr = field<double>(j, "encoder_lr");
  c.head_lr = field<double>(j, "head_lr");
  c.weight_decay = field<double>(j, "weight_decay");
  c.checkpoint_interval = field<std::size_t>(j, "checkpoint_interval");
  c.threads = field<std::size_t>(j, "threads");
  return c;
}

void apply_config(std::istream& in, model::ModelConfig& m, TrainingConfig& t) {
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string content(cirforge::trim(raw));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line);
    const std::string key(cirforge::trim(std::string_view(content).substr(0, eq)));
    const std::string value(cirforge::trim(std::string_view(content).substr(eq + 1)));
    if (value.empty()) throw ParseError("empty value for " + key, line);
    auto size = [&] { return parse_number<std::size_t>(value, line, key); };
    auto u64 = [&] { return parse_number<std::uint64_t>(value, line, key); };
    auto real = [&] { return parse_number<double>(value, line, key); };
    auto variant = [&] {
      const auto v = model::parse_variant(value);
      if (!v) throw ParseError("bad value for " + key + ": '" + value + "'", line);
      return *v;
    };
    auto finetune = [&] {
      const auto v = model::parse_finetune(value);
      if (!v) throw ParseError("bad value for " + key + ": '" + value + "'", line);
      return *v;
    };
    if (key == "model.d") m.d = size();
    else if (key == "model.fusion_layers") m.fusion_layers = size();
    else if (key == "model.heads") m.heads = size();
    else if (key == "model.vocab") m.vocab = size();
    else if (key == "model.max_text_tokens") m.max_text_tokens = size();
    else if (key == "model.image_tokens") m.image_tokens = size();
    else if (key == "model.feature_dim") m.feature_dim = size();
    else if (key == "model.feature_seed") m.feature_seed = u64();
    else if (key == "model.init_seed") m.init_seed = u64();
    else if (key == "train.batch_size") t.batch_size = size();
    else if (key == "train.epochs") t.epochs = size();
    else if (key == "train.seed") t.seed = u64();
    else if (key == "train.finetune") t.finetune = finetune();
    else if (key == "train.variant") t.variant = variant();
    else if (key == "train.tau") t.tau = real();
    else if (key == "train.encoder_lr") t.encoder_lr = real();
    else if (key == "train.head_lr") t.head_lr = real();
    else if (key == "train.weight_decay") t.weight_decay = real();
    else if (key == "train.checkpoint_interval") t.checkpoint_interval = size();
    else if (key == "train.threads") t.threads = size();
    else throw ParseError("unknown key " + key, line);
  }
}

void apply_config_file(const std::filesystem::path& path, model::ModelConfig& m, TrainingConfig& t) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  apply_config(in, m, t);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t epoch) {
  if (count == 0) throw ValidationError("make_batches: no triplets");
  if (batch_size == 0) throw ValidationError("make_batches: batch_size must be positive");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(seed, fnv1a64("batches"), epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; (b + 1) * batch_size <= count; ++b)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                     order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  return out;
}

std::uint64_t hash_triplets(const std::vector<mine::Triplet>& triplets) {
  std::uint64_t h = fnv1a64("triplets");
  for (const auto& t : triplets) h = derive_seed(h, t.ref_id, t.target_id, fnv1a64(t.relative_caption));
  return h;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& checkpoint) {
  const auto path = sidecar_path(checkpoint);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (field<std::string>(j, "format") != kSidecarFormat) throw FormatError(path.string() + ": unknown format");
  CheckpointInfo info;
  info.model = model_config_from_json(field<json>(j, "model"));
  info.training = training_config_from_json(field<json>(j, "training"));
  info.steps = field<std::uint64_t>(j, "steps");
  info.total_steps = field<std::uint64_t>(j, "total_steps");
  info.triplets_hash = parse_hex64(field<std::string>(j, "triplets_hash"));
  return info;
}

TrainReport train(model::ModelConfig model_config, const TrainingConfig& training,
                  const std::vector<mine::Triplet>& triplets, std::shared_ptr<const model::ImageFeatureSource> images,
                  const std::filesystem::path& out, const TrainOptions& options) {
  training.validate();
  model_config.variant = training.variant;
  model_config.finetune = training.finetune;
  model_config.validate();
  check_trainable_size(triplets, training);
  check_ids(triplets, *images);
  model::TransAgg m(model_config, std::move(images));
  nc::AdamW opt(adam_config(training));
  return run(m, opt, RunState{}, training, triplets, out, options);
}

TrainReport resume(const std::filesystem::path& checkpoint, model::ModelConfig model_config,
                   const TrainingConfig& training, const std::vector<mine::Triplet>& triplets,
                   std::shared_ptr<const model::ImageFeatureSource> images, const std::filesystem::path& out,
                   const TrainOptions& options) {
  training.validate();
  model_config.variant = training.variant;
  model_config.finetune = training.finetune;
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  if (auto diff = info.model.first_difference(model_config))
    throw ValidationError("resume: model config differs from the checkpoint in field " + *diff);
  if (auto diff = info.training.first_difference(training))
    throw ValidationError("resume: training config differs from the checkpoint in field " + *diff);
  if (info.triplets_hash != hash_triplets(triplets))
    throw ValidationError("resume: triplets differ from the checkpoint's training data");
  check_trainable_size(triplets, training);
  check_ids(triplets, *images);

  model::TransAgg m(model_config, std::move(images));
  nc::TensorTable table = nc::read_checkpoint(checkpoint);
  m.import_params(table);
  nc::AdamW opt(adam_config(training));
  opt.import_state(m.params(), table);

  RunState state;
  bool have_step = false, have_losses = false;
  for (const auto& [name, t] : table) {
    if (name == kStepEntry && t.size() == 1) {
      state.step = static_cast<std::uint64_t>(t[0]);
      have_step = true;
    } else if (name == kLossesEntry) {
      state.step_losses = t.data();
      have_losses = true;
    }
  }
  if (!have_step || !have_losses || state.step_losses.size() != state.step || state.step != opt.step_count() ||
      state.step != info.steps)
    throw FormatError(checkpoint.string() + ": inconsistent trainer state");
  return run(m, opt, std::move(state), training, triplets, out, options);
}

void save_model(const model::TransAgg& m, const std::filesystem::path& path) {
  TrainingConfig training;
  training.variant = m.config().variant;
  training.finetune = m.config().finetune;
  nc::write_checkpoint(m.export_params(), path);
  write_sidecar(path, m.config(), training, 0, 0, 0, {});
}

std::unique_ptr<model::TransAgg> load_model(const std::filesystem::path& checkpoint,
                                            std::shared_ptr<const model::ImageFeatureSource> images) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  info.model.validate();
  auto m = std::make_unique<model::TransAgg>(info.model, std::move(images));
  m->import_params(nc::read_checkpoint(checkpoint));
  return m;
}

}  // namespace cirforge::train
