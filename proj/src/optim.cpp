#include "cirforge/optim.hpp"

#include <cmath>
#include <numbers>

#include "cirforge/errors.hpp"

namespace cirforge::nc {

Var ParameterSet::add(std::string name, Tensor value, ParamGroup group) {
  if (index_.contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), parameter(std::move(value)), group});
  return params_.back().var;
}

const Var& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return params_[it->second].var;
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.requires_grad() ? 1 : 0;
  return n;
}

std::size_t ParameterSet::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.requires_grad() ? p.var.value().size() : 0;
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

double cosine_lr(double base, double position) {
  if (!(position >= 0.0 && position <= 1.0)) {
    throw ValidationError("schedule position " + std::to_string(position) + " outside [0, 1]");
  }
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * position));
}

void AdamW::step(ParameterSet& params, double schedule_position) {
  const double enc_lr = cosine_lr(config_.encoder_lr, schedule_position);
  const double head_lr = cosine_lr(config_.head_lr, schedule_position);
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (const auto& p : params.params()) {
    if (!p.var.requires_grad()) continue;
    Var var = p.var;
    Tensor& value = var.mutable_value();
    const Tensor& grad = var.grad();
    auto& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m = Tensor(value.shape(), 0.0);
      mom.v = Tensor(value.shape(), 0.0);
    }
    if (mom.m.shape() != value.shape()) {
      throw ValidationError("optimizer state for '" + p.name + "' has shape " + mom.m.shape_string());
    }
    const double lr = p.group == ParamGroup::encoder ? enc_lr : head_lr;
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      value[i] *= decay;
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g;
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> AdamW::export_state(const ParameterSet& params) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : params.params()) {
    auto it = moments_.find(p.name);
    const Tensor zeros(p.var.value().shape(), 0.0);
    out.emplace_back("adam.m/" + p.name, it == moments_.end() ? zeros : it->second.m);
    out.emplace_back("adam.v/" + p.name, it == moments_.end() ? zeros : it->second.v);
  }
  out.emplace_back("adam.step", Tensor({1}, {static_cast<double>(step_)}));
  return out;
}

void AdamW::import_state(const ParameterSet& params, const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : entries) by_name[name] = &t;
  auto fetch = [&](const std::string& name, const std::vector<std::size_t>& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks '" + name + "'");
    if (it->second->shape() != shape) {
      throw FormatError("checkpoint entry '" + name + "' has shape " + it->second->shape_string());
    }
    return *it->second;
  };
  std::map<std::string, Moments> moments;
  for (const auto& p : params.params()) {
    moments[p.name] = {fetch("adam.m/" + p.name, p.var.value().shape()), fetch("adam.v/" + p.name, p.var.value().shape())};
  }
  const double step = fetch("adam.step", {1})[0];
  if (!(step >= 0.0) || step != std::floor(step)) throw FormatError("checkpoint step count is not a whole number");
  moments_ = std::move(moments);
  step_ = static_cast<std::uint64_t>(step);
}

}  // namespace cirforge::nc
