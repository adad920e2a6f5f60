#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pan/error.hpp"
#include "pan/rng.hpp"
#include "pan/tensor.hpp"

namespace pan {

enum class Mode { kTrain, kEval };

/// Named view into a layer-owned parameter and its gradient accumulator.
/// Both tensors always have the same shape.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

/// Named view into non-learned layer state (batchnorm running statistics).
/// Buffers are never touched by the optimizer but must survive a checkpoint
/// round trip for eval mode to work.
struct BufferRef {
  std::string name;
  Tensor* value;
};

/// Differentiation contract shared by every layer.
///
/// forward caches whatever backward needs; backward returns dLoss/dInput and
/// accumulates dLoss/dParam into the layer's gradient tensors. backward without
/// a preceding forward on the same instance is a state error.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& upstream) = 0;

  /// Appends this layer's parameters, names prefixed with `prefix`.
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    (void)prefix;
    (void)out;
  }

  /// Appends non-learned state the same way. Most layers have none.
  virtual void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
    (void)prefix;
    (void)out;
  }

  virtual void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

  /// Reseeds stochastic behavior (dropout masks). No-op for deterministic layers.
  virtual void set_seed(std::uint64_t) {}

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    collect_params("", out);
    return out;
  }

  std::vector<BufferRef> buffers() {
    std::vector<BufferRef> out;
    collect_buffers("", out);
    return out;
  }

  void zero_grads() {
    for (ParamRef& p : parameters()) {
      std::fill(p.grad->vec().begin(), p.grad->vec().end(), 0.0);
    }
  }

 protected:
  void require_forward_cache(bool have, const char* layer) const {
    if (!have) {
      throw StateError(std::string(layer) + ": backward called before forward");
    }
  }

  Mode mode_ = Mode::kTrain;
};

/// Applies layers in order; backward runs the reverse chain.
class Sequential : public Layer {
 public:
  Sequential() = default;

  Sequential& add(std::unique_ptr<Layer> layer, std::string name) {
    layers_.push_back(std::move(layer));
    names_.push_back(std::move(name));
    return *this;
  }

  Tensor forward(const Tensor& x) override {
    Tensor cur = x;
    for (auto& l : layers_) cur = l->forward(cur);
    ran_forward_ = true;
    return cur;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(ran_forward_, "sequential");
    Tensor cur = upstream;
    for (std::size_t i = layers_.size(); i > 0; --i) cur = layers_[i - 1]->backward(cur);
    return cur;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->collect_params(prefix + names_[i] + ".", out);
    }
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->collect_buffers(prefix + names_[i] + ".", out);
    }
  }

  void set_mode(Mode m) override {
    mode_ = m;
    for (auto& l : layers_) l->set_mode(m);
  }

  void set_seed(std::uint64_t seed) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->set_seed(derive_seed(seed, i));
    }
  }

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::string> names_;
  bool ran_forward_ = false;
};

}  // namespace pan
