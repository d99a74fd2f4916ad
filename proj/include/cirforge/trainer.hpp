#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cirforge/errors.hpp"
#include "cirforge/miner.hpp"
#include "cirforge/transagg.hpp"
#include "json.hpp"

namespace cirforge::train {

struct TrainingConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  model::Finetune finetune = model::Finetune::both;
  model::Variant variant = model::Variant::full;
  double tau = 0.01;
  double encoder_lr = 1e-6;
  double head_lr = 1e-4;
  double weight_decay = 0.01;
  /// Steps between intermediate checkpoints; 0 writes only the final one.
  std::size_t checkpoint_interval = 0;
  /// Workers composing the queries of a batch. Results do not depend on it.
  std::size_t threads = 1;

  bool operator==(const TrainingConfig&) const = default;

  /// Throws ValidationError for batch_size 0, tau <= 0, negative rates or threads 0.
  void validate() const;
  /// First differing field that affects the optimization trajectory;
  /// checkpoint_interval and threads are ignored.
  std::optional<std::string> first_difference(const TrainingConfig& other) const;
};

nlohmann::ordered_json to_json(const model::ModelConfig& config);
nlohmann::ordered_json to_json(const TrainingConfig& config);
/// Throws FormatError on a missing or ill-typed field.
model::ModelConfig model_config_from_json(const nlohmann::json& j);
TrainingConfig training_config_from_json(const nlohmann::json& j);

/// Applies `key = value` lines (dotted keys, `#` comments) to the configs.
/// Keys are model.<field> and train.<field>; unknown keys and bad values
/// raise ParseError with the line number.
void apply_config(std::istream& in, model::ModelConfig& model, TrainingConfig& training);
void apply_config_file(const std::filesystem::path& path, model::ModelConfig& model, TrainingConfig& training);

/// Triplet indices per batch for one epoch: a permutation keyed by
/// (seed, epoch), cut into full batches; the remainder is dropped.
/// Throws ValidationError for count 0 or batch_size 0.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t epoch);

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(std::uint64_t step)
      : Error("non-finite loss at step " + std::to_string(step)), step_(step) {}
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

struct TrainReport {
  /// Mean step loss of every completed epoch.
  std::vector<double> epoch_losses;
  std::vector<double> step_losses;
  std::uint64_t steps = 0;
  std::uint64_t total_steps = 0;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;
  std::vector<std::string> warnings;

  bool finished() const noexcept { return steps == total_steps; }
};

struct TrainOptions {
  /// Checkpoint to the output path and return once this many steps are done.
  std::optional<std::uint64_t> stop_after_steps;
};

/// Everything needed to rebuild a training run or a model for inference.
struct CheckpointInfo {
  model::ModelConfig model;
  TrainingConfig training;
  std::uint64_t steps = 0;
  std::uint64_t total_steps = 0;
  std::uint64_t triplets_hash = 0;
};

/// Sidecar of a checkpoint: "<checkpoint>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& checkpoint);

/// Runs epochs x (triplets / batch_size) steps of forward, bbc_loss,
/// backward and AdamW with schedule position step / total_steps. The model's
/// variant and finetune mode are taken from `training`. Writes `out` (CIRCKPT1)
/// plus its sidecar at the end and "<out>.step<N>" every checkpoint_interval
/// steps.
TrainReport train(model::ModelConfig model_config, const TrainingConfig& training,
                  const std::vector<mine::Triplet>& triplets, std::shared_ptr<const model::ImageFeatureSource> images,
                  const std::filesystem::path& out, const TrainOptions& options = {});

/// Continues the run stored in `checkpoint` to completion. Refuses with
/// ValidationError naming the first differing configuration field, or
/// "triplets" when the training data changed.
TrainReport resume(const std::filesystem::path& checkpoint, model::ModelConfig model_config,
                   const TrainingConfig& training, const std::vector<mine::Triplet>& triplets,
                   std::shared_ptr<const model::ImageFeatureSource> images, const std::filesystem::path& out,
                   const TrainOptions& options = {});

/// Model with the checkpoint's parameters, for inference.
std::unique_ptr<model::TransAgg> load_model(const std::filesystem::path& checkpoint,
                                            std::shared_ptr<const model::ImageFeatureSource> images);

/// Writes the model's parameters and a sidecar for inference use (no
/// optimizer state, zero steps). load_model reads it back.
void save_model(const model::TransAgg& model, const std::filesystem::path& path);

/// Order-sensitive hash of the triplets that drive training.
std::uint64_t hash_triplets(const std::vector<mine::Triplet>& triplets);

}  // namespace cirforge::train
