#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cirforge/numcore.hpp"

namespace cirforge::nc {

/// Encoder parameters and everything else get separate base learning rates.
enum class ParamGroup { encoder, head };

struct NamedParam {
  std::string name;
  Var var;
  ParamGroup group = ParamGroup::head;
};

/// Named parameters in registration order.
class ParameterSet {
 public:
  /// Throws ValidationError on a duplicate name.
  Var add(std::string name, Tensor value, ParamGroup group);

  /// Throws ValidationError naming an unknown parameter.
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  const std::vector<NamedParam>& params() const noexcept { return params_; }
  std::size_t trainable_count() const;
  std::size_t trainable_scalars() const;
  void zero_grad();

 private:
  std::vector<NamedParam> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  double encoder_lr = 1e-6;
  double head_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// base * 0.5 * (1 + cos(pi * position)). Throws ValidationError unless
/// position is in [0, 1].
double cosine_lr(double base, double position);

/// AdamW with decoupled weight decay: p <- p * (1 - lr * wd), then the
/// bias-corrected Adam step. Parameters that do not require a gradient are
/// left untouched.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(ParameterSet& params, double schedule_position);

  std::uint64_t step_count() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return config_; }

  /// Moments as "adam.m/<name>", "adam.v/<name>" and the step count as "adam.step".
  std::vector<std::pair<std::string, Tensor>> export_state(const ParameterSet& params) const;
  /// Inverse of export_state; throws FormatError on missing or misshapen entries.
  void import_state(const ParameterSet& params, const std::vector<std::pair<std::string, Tensor>>& entries);

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace cirforge::nc
