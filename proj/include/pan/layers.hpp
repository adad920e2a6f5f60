#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pan/layer.hpp"
#include "pan/rng.hpp"
#include "pan/tensor.hpp"

namespace pan {

/// Fills a parameter tensor with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.vec()) v = rng.uniform(-bound, bound);
}

/// Geometry of one 1-D convolution. Causal convolutions use left padding K-1
/// and stride 1 so output index t depends on input indices <= t only.
struct Conv1dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t left_pad = 0;
  std::size_t right_pad = 0;
  bool causal = false;

  static Conv1dSpec causal_spec(std::size_t in_ch, std::size_t out_ch, std::size_t k) {
    Conv1dSpec s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = k;
    s.stride = 1;
    s.left_pad = k - 1;
    s.right_pad = 0;
    s.causal = true;
    return s;
  }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
      throw ConfigError("conv1d: channels, kernel and stride must be positive");
    }
    if (causal && (left_pad != kernel - 1 || right_pad != 0 || stride != 1)) {
      throw ConfigError("conv1d: causal requires left_pad == K-1, right_pad == 0, stride == 1");
    }
  }

  std::size_t output_length(std::size_t input_length) const {
    const std::size_t padded = input_length + left_pad + right_pad;
    if (padded < kernel) {
      throw DimensionError("conv1d: padded length " + std::to_string(padded) +
                           " shorter than kernel " + std::to_string(kernel));
    }
    return (padded - kernel) / stride + 1;
  }
};

/// Cross-correlation (no kernel flip) with bias over [N x C_in x L].
class Conv1d : public Layer {
 public:
  Conv1d(const Conv1dSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    weight_ = Tensor({spec_.out_channels, spec_.in_channels, spec_.kernel});
    bias_ = Tensor({spec_.out_channels});
    init_uniform(weight_, spec_.in_channels * spec_.kernel, rng);
    init_uniform(bias_, spec_.in_channels * spec_.kernel, rng);
    weight_grad_ = Tensor(weight_.shape());
    bias_grad_ = Tensor(bias_.shape());
  }

  const Conv1dSpec& spec() const { return spec_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) != spec_.in_channels) {
      throw DimensionError("conv1d: expected [N x " + std::to_string(spec_.in_channels) +
                           " x L], got " + x.shape_str());
    }
    const std::size_t n = x.dim(0), cin = spec_.in_channels, len = x.dim(2);
    const std::size_t lp = spec_.left_pad, padded = len + lp + spec_.right_pad;
    const std::size_t out_len = spec_.output_length(len);
    const std::size_t cout = spec_.out_channels, k = spec_.kernel, stride = spec_.stride;

    padded_ = Tensor({n, cin, padded});
    {
      const double* px = x.data();
      double* pp = padded_.data();
      for (std::size_t nc = 0; nc < n * cin; ++nc) {
        std::copy(px + nc * len, px + (nc + 1) * len, pp + nc * padded + lp);
      }
    }
    input_length_ = len;

    Tensor out({n, cout, out_len});
    const double* pp = padded_.data();
    const double* pw = weight_.data();
    double* po = out.data();
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        double* orow = po + (in * cout + oc) * out_len;
        std::fill(orow, orow + out_len, bias_[oc]);
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const double* xrow = pp + (in * cin + ic) * padded;
          const double* wrow = pw + (oc * cin + ic) * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double w = wrow[kk];
            const double* xk = xrow + kk;
            if (stride == 1) {
              for (std::size_t t = 0; t < out_len; ++t) orow[t] += w * xk[t];
            } else {
              for (std::size_t t = 0; t < out_len; ++t) orow[t] += w * xk[t * stride];
            }
          }
        }
      }
    }
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "conv1d");
    const std::size_t n = padded_.dim(0), cin = spec_.in_channels, padded = padded_.dim(2);
    const std::size_t cout = spec_.out_channels, k = spec_.kernel, stride = spec_.stride;
    const std::size_t out_len = spec_.output_length(input_length_);
    if (upstream.rank() != 3 || upstream.dim(0) != n || upstream.dim(1) != cout ||
        upstream.dim(2) != out_len) {
      throw DimensionError("conv1d backward: upstream " + upstream.shape_str() +
                           " does not match output [N x C2 x L']");
    }

    Tensor dpadded({n, cin, padded});
    const double* pu = upstream.data();
    const double* pp = padded_.data();
    const double* pw = weight_.data();
    double* pdp = dpadded.data();
    double* pdw = weight_grad_.data();

    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* urow = pu + (in * cout + oc) * out_len;
        double acc = 0.0;
        for (std::size_t t = 0; t < out_len; ++t) acc += urow[t];
        bias_grad_[oc] += acc;
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const double* xrow = pp + (in * cin + ic) * padded;
          double* dxrow = pdp + (in * cin + ic) * padded;
          double* dwrow = pdw + (oc * cin + ic) * k;
          const double* wrow = pw + (oc * cin + ic) * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double w = wrow[kk];
            double dw = 0.0;
            const double* xk = xrow + kk;
            double* dxk = dxrow + kk;
            if (stride == 1) {
              for (std::size_t t = 0; t < out_len; ++t) {
                dw += urow[t] * xk[t];
                dxk[t] += w * urow[t];
              }
            } else {
              for (std::size_t t = 0; t < out_len; ++t) {
                dw += urow[t] * xk[t * stride];
                dxk[t * stride] += w * urow[t];
              }
            }
            dwrow[kk] += dw;
          }
        }
      }
    }

    Tensor dx({n, cin, input_length_});
    const std::size_t lp = spec_.left_pad;
    double* pdx = dx.data();
    for (std::size_t nc = 0; nc < n * cin; ++nc) {
      std::copy(pdp + nc * padded + lp, pdp + nc * padded + lp + input_length_,
                pdx + nc * input_length_);
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "weight", &weight_, &weight_grad_});
    out.push_back({prefix + "bias", &bias_, &bias_grad_});
  }

 private:
  Conv1dSpec spec_;
  Tensor weight_, bias_, weight_grad_, bias_grad_;
  Tensor padded_;
  std::size_t input_length_ = 0;
  bool have_cache_ = false;
};

/// Windowed per-channel maximum. Gradient routes to the argmax position,
/// lowest index on ties.
class MaxPool1d : public Layer {
 public:
  MaxPool1d(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {
    if (kernel_ == 0 || stride_ == 0) throw ConfigError("maxpool1d: kernel and stride must be positive");
  }

  std::size_t output_length(std::size_t input_length) const {
    if (input_length < kernel_) {
      throw DimensionError("maxpool1d: input length " + std::to_string(input_length) +
                           " shorter than kernel " + std::to_string(kernel_));
    }
    return (input_length - kernel_) / stride_ + 1;
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3) throw DimensionError("maxpool1d: expected [N x C x L], got " + x.shape_str());
    const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
    const std::size_t out_len = output_length(len);
    input_shape_ = x.shape();
    Tensor out({x.dim(0), x.dim(1), out_len});
    argmax_.assign(rows * out_len, 0);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = px + r * len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::size_t start = t * stride_;
        double best = row[start];
        std::size_t best_i = start;
        for (std::size_t j = 1; j < kernel_; ++j) {
          if (row[start + j] > best) {
            best = row[start + j];
            best_i = start + j;
          }
        }
        po[r * out_len + t] = best;
        argmax_[r * out_len + t] = best_i;
      }
    }
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "maxpool1d");
    const std::size_t rows = input_shape_[0] * input_shape_[1], len = input_shape_[2];
    const std::size_t out_len = output_length(len);
    Tensor dx(input_shape_);
    const double* pu = upstream.data();
    double* pdx = dx.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < out_len; ++t) {
        pdx[r * len + argmax_[r * out_len + t]] += pu[r * out_len + t];
      }
    }
    return dx;
  }

 private:
  std::size_t kernel_, stride_;
  std::vector<std::size_t> argmax_;
  std::vector<std::size_t> input_shape_;
  bool have_cache_ = false;
};

/// Per-channel batch normalization over [N x C x L] with biased batch variance.
/// Train mode normalizes with batch statistics and updates the running ones;
/// eval mode uses the running statistics only.
class BatchNorm1d : public Layer {
 public:
  explicit BatchNorm1d(std::size_t channels, double eps = 1e-5, double momentum = 0.1)
      : channels_(channels), eps_(eps), momentum_(momentum) {
    gamma_ = Tensor::ones({channels});
    beta_ = Tensor({channels});
    gamma_grad_ = Tensor({channels});
    beta_grad_ = Tensor({channels});
    running_mean_ = Tensor({channels});
    running_var_ = Tensor::ones({channels});
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) != channels_) {
      throw DimensionError("batchnorm1d: expected [N x " + std::to_string(channels_) +
                           " x L], got " + x.shape_str());
    }
    const std::size_t n = x.dim(0), len = x.dim(2);
    const std::size_t m = n * len;
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();

    if (mode_ == Mode::kTrain) {
      if (m < 2) throw DomainError("batchnorm1d: train mode needs N*L >= 2 per channel");
      xhat_ = Tensor(x.shape());
      inv_std_.assign(channels_, 0.0);
      double* ph = xhat_.data();
      for (std::size_t c = 0; c < channels_; ++c) {
        double mean = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
          const double* row = px + (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) mean += row[t];
        }
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
          const double* row = px + (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            const double d = row[t] - mean;
            var += d * d;
          }
        }
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        const double g = gamma_[c], b = beta_[c];
        for (std::size_t in = 0; in < n; ++in) {
          const double* row = px + (in * channels_ + c) * len;
          double* hrow = ph + (in * channels_ + c) * len;
          double* orow = po + (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            const double h = (row[t] - mean) * inv;
            hrow[t] = h;
            orow[t] = g * h + b;
          }
        }
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var;
      }
      train_cache_ = true;
    } else {
      xhat_ = Tensor(x.shape());
      eval_inv_std_.assign(channels_, 0.0);
      double* ph = xhat_.data();
      for (std::size_t c = 0; c < channels_; ++c) {
        const double inv = 1.0 / std::sqrt(running_var_[c] + eps_);
        eval_inv_std_[c] = inv;
        const double mean = running_mean_[c];
        const double g = gamma_[c], b = beta_[c];
        for (std::size_t in = 0; in < n; ++in) {
          const std::size_t base = (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            const double h = (px[base + t] - mean) * inv;
            ph[base + t] = h;
            po[base + t] = g * h + b;
          }
        }
      }
      train_cache_ = false;
    }
    input_shape_ = x.shape();
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "batchnorm1d");
    const std::size_t n = input_shape_[0], len = input_shape_[2];
    const std::size_t m = n * len;
    Tensor dx(input_shape_);
    const double* pu = upstream.data();
    double* pdx = dx.data();

    if (train_cache_) {
      const double* ph = xhat_.data();
      for (std::size_t c = 0; c < channels_; ++c) {
        double sum_u = 0.0, sum_uh = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
          const std::size_t base = (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            sum_u += pu[base + t];
            sum_uh += pu[base + t] * ph[base + t];
          }
        }
        gamma_grad_[c] += sum_uh;
        beta_grad_[c] += sum_u;
        const double mean_u = sum_u / static_cast<double>(m);
        const double mean_uh = sum_uh / static_cast<double>(m);
        const double scale = gamma_[c] * inv_std_[c];
        for (std::size_t in = 0; in < n; ++in) {
          const std::size_t base = (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            pdx[base + t] = scale * (pu[base + t] - mean_u - ph[base + t] * mean_uh);
          }
        }
      }
    } else {
      const double* ph = xhat_.data();
      for (std::size_t c = 0; c < channels_; ++c) {
        const double scale = gamma_[c] * eval_inv_std_[c];
        double sum_u = 0.0, sum_uh = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
          const std::size_t base = (in * channels_ + c) * len;
          for (std::size_t t = 0; t < len; ++t) {
            sum_u += pu[base + t];
            sum_uh += pu[base + t] * ph[base + t];
            pdx[base + t] = scale * pu[base + t];
          }
        }
        gamma_grad_[c] += sum_uh;
        beta_grad_[c] += sum_u;
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "gamma", &gamma_, &gamma_grad_});
    out.push_back({prefix + "beta", &beta_, &beta_grad_});
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override {
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
  }

  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  std::size_t channels_;
  double eps_, momentum_;
  Tensor gamma_, beta_, gamma_grad_, beta_grad_;
  Tensor running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_, eval_inv_std_;
  std::vector<std::size_t> input_shape_;
  bool have_cache_ = false;
  bool train_cache_ = false;
};

/// Exact erf-based GELU, x * Phi(x).
class Gelu : public Layer {
 public:
  static double phi_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

  Tensor forward(const Tensor& x) override {
    input_ = x;
    Tensor out = x;
    for (double& v : out.vec()) v *= phi_cdf(v);
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "gelu");
    Tensor dx = upstream;
    const double inv_sqrt2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double x = input_[i];
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      dx[i] *= phi_cdf(x) + x * pdf;
    }
    return dx;
  }

 private:
  Tensor input_;
  bool have_cache_ = false;
};

class Relu : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    input_ = x;
    Tensor out = x;
    // v < 0 (not max(0, v)) so a NaN passes through instead of turning into 0;
    // the training loop relies on non-finite activations surfacing in the loss.
    for (double& v : out.vec()) {
      if (v < 0.0) v = 0.0;
    }
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "relu");
    Tensor dx = upstream;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (input_[i] <= 0.0) dx[i] = 0.0;
    }
    return dx;
  }

 private:
  Tensor input_;
  bool have_cache_ = false;
};

class Sigmoid : public Layer {
 public:
  static double eval(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  Tensor forward(const Tensor& x) override {
    Tensor out = x;
    for (double& v : out.vec()) v = eval(v);
    output_ = out;
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "sigmoid");
    Tensor dx = upstream;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double y = output_[i];
      dx[i] *= y * (1.0 - y);
    }
    return dx;
  }

 private:
  Tensor output_;
  bool have_cache_ = false;
};

/// Inverted dropout: train mode zeroes with probability p and scales the rest
/// by 1/(1-p); eval mode is the identity. The mask is a pure function of the
/// layer seed and the input size, so a fixed seed gives bit-identical forwards.
class Dropout : public Layer {
 public:
  explicit Dropout(double p, std::uint64_t seed = 0) : p_(p), seed_(seed) {
    if (p_ < 0.0 || p_ >= 1.0) throw DomainError("dropout: p must be in [0, 1)");
  }

  void set_seed(std::uint64_t seed) override { seed_ = seed; }

  Tensor forward(const Tensor& x) override {
    if (mode_ == Mode::kEval || p_ == 0.0) {
      identity_ = true;
      have_cache_ = true;
      return x;
    }
    identity_ = false;
    Rng rng(derive_seed(seed_, 0x64726f70ULL));
    const double keep = 1.0 - p_;
    const double inv_keep = 1.0 / keep;
    mask_.assign(x.size(), 0.0);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (rng.uniform() < keep) {
        mask_[i] = inv_keep;
        out[i] *= inv_keep;
      } else {
        out[i] = 0.0;
      }
    }
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "dropout");
    if (identity_) return upstream;
    Tensor dx = upstream;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

 private:
  double p_;
  std::uint64_t seed_;
  std::vector<double> mask_;
  bool identity_ = true;
  bool have_cache_ = false;
};

/// Affine map on the last axis: [... x D_in] -> [... x D_out].
class Linear : public Layer {
 public:
  Linear(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias = true)
      : d_in_(d_in), d_out_(d_out), with_bias_(with_bias) {
    weight_ = Tensor({d_in, d_out});
    bias_ = Tensor({d_out});
    init_uniform(weight_, d_in, rng);
    if (with_bias_) init_uniform(bias_, d_in, rng);
    weight_grad_ = Tensor(weight_.shape());
    bias_grad_ = Tensor(bias_.shape());
  }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  Tensor forward(const Tensor& x) override {
    if (x.rank() == 0 || x.shape().back() != d_in_) {
      throw DimensionError("linear: expected trailing dim " + std::to_string(d_in_) + ", got " +
                           x.shape_str());
    }
    const std::size_t rows = x.size() / d_in_;
    input_ = x;
    std::vector<std::size_t> out_shape = x.shape();
    out_shape.back() = d_out_;
    Tensor out(std::move(out_shape));
    const double* px = x.data();
    const double* pw = weight_.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double* orow = po + r * d_out_;
      if (with_bias_) {
        std::copy(bias_.data(), bias_.data() + d_out_, orow);
      } else {
        std::fill(orow, orow + d_out_, 0.0);
      }
      const double* xrow = px + r * d_in_;
      for (std::size_t i = 0; i < d_in_; ++i) {
        const double xv = xrow[i];
        const double* wrow = pw + i * d_out_;
        for (std::size_t j = 0; j < d_out_; ++j) orow[j] += xv * wrow[j];
      }
    }
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "linear");
    const std::size_t rows = input_.size() / d_in_;
    if (upstream.size() != rows * d_out_) {
      throw DimensionError("linear backward: upstream " + upstream.shape_str() +
                           " does not match output rows");
    }
    Tensor dx(input_.shape());
    const double* pu = upstream.data();
    const double* px = input_.data();
    const double* pw = weight_.data();
    double* pdx = dx.data();
    double* pdw = weight_grad_.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* urow = pu + r * d_out_;
      const double* xrow = px + r * d_in_;
      double* dxrow = pdx + r * d_in_;
      if (with_bias_) {
        for (std::size_t j = 0; j < d_out_; ++j) bias_grad_[j] += urow[j];
      }
      for (std::size_t i = 0; i < d_in_; ++i) {
        const double* wrow = pw + i * d_out_;
        double* dwrow = pdw + i * d_out_;
        double acc = 0.0;
        const double xv = xrow[i];
        for (std::size_t j = 0; j < d_out_; ++j) {
          acc += urow[j] * wrow[j];
          dwrow[j] += xv * urow[j];
        }
        dxrow[i] = acc;
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "weight", &weight_, &weight_grad_});
    if (with_bias_) out.push_back({prefix + "bias", &bias_, &bias_grad_});
  }

 private:
  std::size_t d_in_, d_out_;
  bool with_bias_;
  Tensor weight_, bias_, weight_grad_, bias_grad_;
  Tensor input_;
  bool have_cache_ = false;
};

/// Normalization over the last axis with learnable per-position gain and bias.
class LayerNorm : public Layer {
 public:
  explicit LayerNorm(std::size_t width, double eps = 1e-5) : width_(width), eps_(eps) {
    if (width_ < 2) throw DomainError("layernorm: normalized width must be >= 2");
    gain_ = Tensor::ones({width});
    bias_ = Tensor({width});
    gain_grad_ = Tensor({width});
    bias_grad_ = Tensor({width});
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() == 0 || x.shape().back() != width_) {
      throw DimensionError("layernorm: expected trailing dim " + std::to_string(width_) +
                           ", got " + x.shape_str());
    }
    const std::size_t rows = x.size() / width_;
    xhat_ = Tensor(x.shape());
    inv_std_.assign(rows, 0.0);
    Tensor out(x.shape());
    const double* px = x.data();
    double* ph = xhat_.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = px + r * width_;
      double mean = 0.0;
      for (std::size_t i = 0; i < width_; ++i) mean += row[i];
      mean /= static_cast<double>(width_);
      double var = 0.0;
      for (std::size_t i = 0; i < width_; ++i) {
        const double d = row[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(width_);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[r] = inv;
      for (std::size_t i = 0; i < width_; ++i) {
        const double h = (row[i] - mean) * inv;
        ph[r * width_ + i] = h;
        po[r * width_ + i] = gain_[i] * h + bias_[i];
      }
    }
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "layernorm");
    const std::size_t rows = xhat_.size() / width_;
    Tensor dx(xhat_.shape());
    const double* pu = upstream.data();
    const double* ph = xhat_.data();
    double* pdx = dx.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* urow = pu + r * width_;
      const double* hrow = ph + r * width_;
      double mean_gu = 0.0, mean_guh = 0.0;
      for (std::size_t i = 0; i < width_; ++i) {
        const double gu = gain_[i] * urow[i];
        mean_gu += gu;
        mean_guh += gu * hrow[i];
        gain_grad_[i] += urow[i] * hrow[i];
        bias_grad_[i] += urow[i];
      }
      mean_gu /= static_cast<double>(width_);
      mean_guh /= static_cast<double>(width_);
      const double inv = inv_std_[r];
      double* dxrow = pdx + r * width_;
      for (std::size_t i = 0; i < width_; ++i) {
        dxrow[i] = inv * (gain_[i] * urow[i] - mean_gu - hrow[i] * mean_guh);
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "gain", &gain_, &gain_grad_});
    out.push_back({prefix + "bias", &bias_, &bias_grad_});
  }

 private:
  std::size_t width_;
  double eps_;
  Tensor gain_, bias_, gain_grad_, bias_grad_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool have_cache_ = false;
};

/// Numerically stabilized softmax over the last axis (pure function form).
inline Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax: scalar input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * width;
    double m = row[0];
    for (std::size_t i = 1; i < width; ++i) m = std::max(m, row[i]);
    double sum = 0.0;
    double* orow = po + r * width;
    for (std::size_t i = 0; i < width; ++i) {
      orow[i] = std::exp(row[i] - m);
      sum += orow[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < width; ++i) orow[i] *= inv;
  }
  return out;
}

class Softmax : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    output_ = softmax_rows(x);
    have_cache_ = true;
    return output_;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "softmax");
    const std::size_t width = output_.shape().back();
    const std::size_t rows = output_.size() / width;
    Tensor dx(output_.shape());
    const double* pu = upstream.data();
    const double* py = output_.data();
    double* pdx = dx.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* urow = pu + r * width;
      const double* yrow = py + r * width;
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += urow[i] * yrow[i];
      for (std::size_t i = 0; i < width; ++i) {
        pdx[r * width + i] = yrow[i] * (urow[i] - dot);
      }
    }
    return dx;
  }

 private:
  Tensor output_;
  bool have_cache_ = false;
};

}  // namespace pan
