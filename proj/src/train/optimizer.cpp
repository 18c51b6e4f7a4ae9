#include <cmath>

#include "grokforget/train.hpp"

namespace gf::train {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::sam_sgd: return "sam_sgd";
    case OptimizerKind::sam_adamw: return "sam_adamw";
  }
  return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adamw") return OptimizerKind::adamw;
  if (s == "sam_sgd") return OptimizerKind::sam_sgd;
  if (s == "sam_adamw") return OptimizerKind::sam_adamw;
  throw ValidationError("unknown optimizer '" + s + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be non-negative");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
  if (sam_radius < 0.0) throw ValidationError("sam_radius must be non-negative");
  if (is_sam() != (sam_radius > 0.0)) throw ValidationError("sam_radius > 0 exactly when the optimizer is a sam_* kind");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("betas must lie in [0, 1)");
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"lr", lr},     {"momentum", momentum},  {"weight_decay", weight_decay},
          {"beta1", beta1},          {"beta2", beta2}, {"eps", eps}, {"sam_radius", sam_radius}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.kind = optimizer_kind_from_string(j.value("kind", std::string("adamw")));
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.sam_radius = j.value("sam_radius", c.sam_radius);
  c.validate();
  return c;
}

Optimizer::Optimizer(OptimizerConfig cfg, std::int64_t size) : cfg_(cfg) {
  cfg_.validate();
  m_.assign(static_cast<std::size_t>(size), 0.0f);
  if (cfg_.kind == OptimizerKind::adamw || cfg_.kind == OptimizerKind::sam_adamw) v_.assign(static_cast<std::size_t>(size), 0.0f);
}

void Optimizer::step(std::span<float> params, std::span<const float> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ShapeError("optimizer state size mismatch");
  ++t_;
  const auto lr = static_cast<float>(cfg_.lr);
  const auto wd = static_cast<float>(cfg_.weight_decay);
  const auto n = params.size();
  if (v_.empty()) {
    const auto mu = static_cast<float>(cfg_.momentum);
    for (std::size_t i = 0; i < n; ++i) {
      const float g = grad[i] + wd * params[i];
      m_[i] = mu * m_[i] + g;
      params[i] -= lr * m_[i];
    }
    return;
  }
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto eps = static_cast<float>(cfg_.eps);
  const float bc1 = 1.0f - static_cast<float>(std::pow(cfg_.beta1, static_cast<double>(t_)));
  const float bc2 = 1.0f - static_cast<float>(std::pow(cfg_.beta2, static_cast<double>(t_)));
  const float step = lr / bc1;
  const float rbc2 = 1.0f / std::sqrt(bc2);
  for (std::size_t i = 0; i < n; ++i) {
    params[i] *= 1.0f - lr * wd;
    m_[i] = b1 * m_[i] + (1.0f - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0f - b2) * grad[i] * grad[i];
    params[i] -= step * m_[i] / (std::sqrt(v_[i]) * rbc2 + eps);
  }
}

SamStepInfo sam_step(std::span<float> params, const GradientFn& grad_fn, Optimizer& base, double radius) {
  if (!(radius > 0.0)) throw ValidationError("sam_step needs a positive radius");
  SamStepInfo info;
  auto [loss, g] = grad_fn(params);
  info.loss = loss;
  info.gradient_evaluations = 1;
  const double norm = std::sqrt(squared_norm(g));
  if (norm == 0.0) {
    info.perturbation_skipped = true;
    base.step(params, g);
    return info;
  }
  std::vector<float> perturbed(params.begin(), params.end());
  const double s = radius / norm;
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += static_cast<float>(s * g[i]);
  auto second = grad_fn(perturbed);
  info.gradient_evaluations = 2;
  base.step(params, second.second);
  return info;
}

}  // namespace gf::train
