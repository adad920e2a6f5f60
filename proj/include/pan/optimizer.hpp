#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pan/layer.hpp"
#include "pan/tensor.hpp"

namespace pan {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (eps <= 0.0) throw ConfigError("adam: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("adam: weight decay must be non-negative");
  }
};

/// Adam with bias correction. Weight decay couples classically: it is added
/// to the gradient before the moment updates.
class Adam {
 public:
  Adam(std::vector<ParamRef> params, const AdamConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamRef& p : params_) {
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& value = *params_[i].value;
      const Tensor& grad = *params_[i].grad;
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j] + cfg_.weight_decay * value[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grads() {
    for (ParamRef& p : params_) {
      std::fill(p.grad->vec().begin(), p.grad->vec().end(), 0.0);
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<ParamRef> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace pan
