#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pan/layers.hpp"

namespace pan {

struct PoolSpec {
  std::size_t kernel = 1;
  std::size_t stride = 1;
};

/// One MSCN branch: conv -> BN -> GELU -> pool -> dropout -> conv -> BN ->
/// GELU -> conv -> BN -> GELU -> pool.
struct BranchConfig {
  Conv1dSpec conv1;
  PoolSpec pool1;
  double dropout = 0.5;
  Conv1dSpec conv2;
  Conv1dSpec conv3;
  PoolSpec pool2;

  void validate() const {
    conv1.validate();
    conv2.validate();
    conv3.validate();
    if (conv1.out_channels != conv2.in_channels || conv2.out_channels != conv3.in_channels) {
      throw ConfigError("mscn branch: convolution channel chain is inconsistent");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("mscn branch: dropout must be in [0, 1)");
  }

  std::size_t output_length(std::size_t input_length) const {
    std::size_t len = conv1.output_length(input_length);
    len = pool_out(pool1, len);
    len = conv2.output_length(len);
    len = conv3.output_length(len);
    return pool_out(pool2, len);
  }

  std::size_t out_channels() const { return conv3.out_channels; }

  static std::size_t pool_out(const PoolSpec& p, std::size_t len) {
    if (len < p.kernel) {
      throw DimensionError("mscn branch: pool kernel " + std::to_string(p.kernel) +
                           " exceeds length " + std::to_string(len));
    }
    return (len - p.kernel) / p.stride + 1;
  }
};

/// Two-branch multiscale CNN over raw windows. The branch outputs are
/// concatenated along the time axis, so both must produce the same channel
/// count while their lengths add up to the encoder width.
struct MscnConfig {
  BranchConfig large;
  BranchConfig small;
  std::size_t input_length = 2816;

  void validate() const {
    large.validate();
    small.validate();
    if (large.conv1.in_channels != 1 || small.conv1.in_channels != 1) {
      throw ConfigError("mscn: both branches take single-channel input");
    }
    if (large.out_channels() != small.out_channels()) {
      throw ConfigError("mscn: branch channel counts differ (" +
                        std::to_string(large.out_channels()) + " vs " +
                        std::to_string(small.out_channels()) + ")");
    }
  }

  std::size_t out_channels() const { return large.out_channels(); }

  std::size_t out_length() const {
    return large.output_length(input_length) + small.output_length(input_length);
  }

  static MscnConfig reference() {
    MscnConfig cfg;
    cfg.large.conv1 = {1, 64, 400, 50, 192, 192, false};
    cfg.large.pool1 = {4, 2};
    cfg.large.conv2 = {64, 128, 7, 1, 3, 3, false};
    cfg.large.conv3 = {128, 128, 7, 1, 3, 3, false};
    cfg.large.pool2 = {3, 1};
    cfg.small.conv1 = {1, 64, 50, 6, 24, 24, false};
    cfg.small.pool1 = {8, 8};
    cfg.small.conv2 = {64, 128, 9, 1, 4, 4, false};
    cfg.small.conv3 = {128, 128, 9, 1, 4, 4, false};
    cfg.small.pool2 = {9, 1};
    return cfg;
  }
};

struct SeResNetConfig {
  std::size_t in_channels = 128;
  std::size_t mid_channels = 30;
  std::size_t reduction = 5;
  bool downsample = true;

  void validate() const {
    if (in_channels == 0 || mid_channels == 0 || reduction == 0) {
      throw ConfigError("se block: channel counts and reduction must be positive");
    }
    if (mid_channels % reduction != 0) {
      throw ConfigError("se block: mid_channels " + std::to_string(mid_channels) +
                        " not divisible by reduction " + std::to_string(reduction));
    }
    if (mid_channels / reduction < 1) throw ConfigError("se block: bottleneck width < 1");
    if (!downsample && in_channels != mid_channels) {
      throw ConfigError("se block: channel change requires a downsample projection");
    }
  }

  std::size_t bottleneck() const { return mid_channels / reduction; }

  static SeResNetConfig reference() { return {128, 30, 5, true}; }
};

struct EncoderConfig {
  std::size_t heads = 5;
  std::size_t width = 75;
  std::size_t tcn_kernel = 7;
  std::size_t ffn_hidden = 120;
  double dropout = 0.1;
  std::size_t blocks = 1;

  void validate() const {
    if (heads == 0 || width == 0 || tcn_kernel == 0 || ffn_hidden == 0 || blocks == 0) {
      throw ConfigError("encoder: heads, width, kernel, ffn width and blocks must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0, 1)");
    if (width < 2) throw ConfigError("encoder: width must support layernorm");
  }

  static EncoderConfig reference() { return {5, 75, 7, 120, 0.1, 1}; }
};

struct ModelConfig {
  MscnConfig mscn;
  SeResNetConfig se;
  EncoderConfig encoder;
  std::size_t num_classes = 5;
  std::size_t classifier_hidden = 128;

  void validate() const {
    mscn.validate();
    se.validate();
    encoder.validate();
    if (num_classes < 2) throw ConfigError("model: need at least two classes");
    if (classifier_hidden == 0) throw ConfigError("model: classifier hidden width must be positive");
    if (mscn.out_channels() != se.in_channels) {
      throw ConfigError("model: mscn channels " + std::to_string(mscn.out_channels()) +
                        " do not match se input channels " + std::to_string(se.in_channels));
    }
    const std::size_t len = mscn.out_length();
    if (len != encoder.width) {
      throw ConfigError("model: mscn output length " + std::to_string(len) +
                        " does not match encoder width " + std::to_string(encoder.width));
    }
  }

  static ModelConfig reference(std::size_t num_classes = 5) {
    ModelConfig cfg;
    cfg.mscn = MscnConfig::reference();
    cfg.se = SeResNetConfig::reference();
    cfg.encoder = EncoderConfig::reference();
    cfg.num_classes = num_classes;
    return cfg;
  }

  /// Downsized variant for gradient checking: channel widths cut to roughly
  /// an eighth, every sequence length (and the 75-wide encoder) kept.
  static ModelConfig miniature(std::size_t num_classes = 5) {
    ModelConfig cfg;
    cfg.mscn.large.conv1 = {1, 8, 400, 50, 192, 192, false};
    cfg.mscn.large.pool1 = {4, 2};
    cfg.mscn.large.conv2 = {8, 16, 7, 1, 3, 3, false};
    cfg.mscn.large.conv3 = {16, 16, 7, 1, 3, 3, false};
    cfg.mscn.large.pool2 = {3, 1};
    cfg.mscn.small.conv1 = {1, 8, 50, 6, 24, 24, false};
    cfg.mscn.small.pool1 = {8, 8};
    cfg.mscn.small.conv2 = {8, 16, 9, 1, 4, 4, false};
    cfg.mscn.small.conv3 = {16, 16, 9, 1, 4, 4, false};
    cfg.mscn.small.pool2 = {9, 1};
    cfg.se = {16, 4, 2, true};
    cfg.encoder = {5, 75, 7, 15, 0.1, 1};
    cfg.num_classes = num_classes;
    cfg.classifier_hidden = 16;
    return cfg;
  }

  /// Canonical one-line rendering used for checkpoint digests and manifests.
  std::string canonical_string() const {
    std::ostringstream os;
    auto conv = [&os](const char* tag, const Conv1dSpec& c) {
      os << tag << "=(" << c.in_channels << "," << c.out_channels << "," << c.kernel << ","
         << c.stride << "," << c.left_pad << "," << c.right_pad << "," << (c.causal ? 1 : 0)
         << ");";
    };
    auto pool = [&os](const char* tag, const PoolSpec& p) {
      os << tag << "=(" << p.kernel << "," << p.stride << ");";
    };
    auto branch = [&](const char* tag, const BranchConfig& b) {
      os << tag << "{";
      conv("c1", b.conv1);
      pool("p1", b.pool1);
      os << "do=" << b.dropout << ";";
      conv("c2", b.conv2);
      conv("c3", b.conv3);
      pool("p2", b.pool2);
      os << "}";
    };
    os << "mscn{";
    branch("large", mscn.large);
    branch("small", mscn.small);
    os << "len=" << mscn.input_length << "}se{" << se.in_channels << "," << se.mid_channels
       << "," << se.reduction << "," << (se.downsample ? 1 : 0) << "}enc{" << encoder.heads
       << "," << encoder.width << "," << encoder.tcn_kernel << "," << encoder.ffn_hidden << ","
       << encoder.dropout << "," << encoder.blocks << "}head{" << classifier_hidden << ","
       << num_classes << "}";
    return os.str();
  }
};

/// Multiscale CNN: two parallel branches concatenated along time.
class Mscn : public Layer {
 public:
  Mscn(const MscnConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    build_branch(large_, cfg_.large, rng);
    build_branch(small_, cfg_.small, rng);
    large_len_ = cfg_.large.output_length(cfg_.input_length);
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != cfg_.input_length) {
      throw DimensionError("mscn: expected [N x 1 x " + std::to_string(cfg_.input_length) +
                           "], got " + x.shape_str());
    }
    Tensor yl = large_.forward(x);
    Tensor ys = small_.forward(x);
    return concat(yl, ys, 2);
  }

  Tensor backward(const Tensor& upstream) override {
    Tensor ul = slice(upstream, 2, 0, large_len_);
    Tensor us = slice(upstream, 2, large_len_, upstream.dim(2) - large_len_);
    Tensor dl = large_.backward(ul);
    Tensor ds = small_.backward(us);
    return add(dl, ds);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    large_.collect_params(prefix + "large.", out);
    small_.collect_params(prefix + "small.", out);
  }

  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override {
    large_.collect_buffers(prefix + "large.", out);
    small_.collect_buffers(prefix + "small.", out);
  }

  void set_mode(Mode mode) override {
    Layer::set_mode(mode);
    large_.set_mode(mode);
    small_.set_mode(mode);
  }

  void set_seed(std::uint64_t seed) override {
    large_.set_seed(derive_seed(seed, 1));
    small_.set_seed(derive_seed(seed, 2));
  }

  Sequential& large() { return large_; }
  Sequential& small() { return small_; }

 private:
  static void build_branch(Sequential& seq, const BranchConfig& b, Rng& rng) {
    seq.add(std::make_unique<Conv1d>(b.conv1, rng), "conv1");
    seq.add(std::make_unique<BatchNorm1d>(b.conv1.out_channels), "bn1");
    seq.add(std::make_unique<Gelu>(), "gelu1");
    seq.add(std::make_unique<MaxPool1d>(b.pool1.kernel, b.pool1.stride), "pool1");
    seq.add(std::make_unique<Dropout>(b.dropout), "drop");
    seq.add(std::make_unique<Conv1d>(b.conv2, rng), "conv2");
    seq.add(std::make_unique<BatchNorm1d>(b.conv2.out_channels), "bn2");
    seq.add(std::make_unique<Gelu>(), "gelu2");
    seq.add(std::make_unique<Conv1d>(b.conv3, rng), "conv3");
    seq.add(std::make_unique<BatchNorm1d>(b.conv3.out_channels), "bn3");
    seq.add(std::make_unique<Gelu>(), "gelu3");
    seq.add(std::make_unique<MaxPool1d>(b.pool2.kernel, b.pool2.stride), "pool2");
  }

  MscnConfig cfg_;
  Sequential large_, small_;
  std::size_t large_len_ = 0;
};

/// Squeeze-and-excitation residual block. The main path applies two 1x1
/// convolutions (ReLU between them); the gate rescales its output per channel
/// and the block input joins through a 1x1 projection when widths differ.
class SeBlock : public Layer {
 public:
  SeBlock(const SeResNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    Conv1dSpec c1{cfg_.in_channels, cfg_.mid_channels, 1, 1, 0, 0, false};
    Conv1dSpec c2{cfg_.mid_channels, cfg_.mid_channels, 1, 1, 0, 0, false};
    conv1_ = std::make_unique<Conv1d>(c1, rng);
    conv2_ = std::make_unique<Conv1d>(c2, rng);
    fc1_ = std::make_unique<Linear>(cfg_.mid_channels, cfg_.bottleneck(), rng, false);
    fc2_ = std::make_unique<Linear>(cfg_.bottleneck(), cfg_.mid_channels, rng, false);
    if (cfg_.downsample) {
      Conv1dSpec pr{cfg_.in_channels, cfg_.mid_channels, 1, 1, 0, 0, false};
      proj_ = std::make_unique<Conv1d>(pr, rng);
    }
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) != cfg_.in_channels) {
      throw DimensionError("se block: expected [N x " + std::to_string(cfg_.in_channels) +
                           " x L], got " + x.shape_str());
    }
    const std::size_t n = x.dim(0), len = x.dim(2);
    v_ = conv2_->forward(relu1_.forward(conv1_->forward(x)));

    // Squeeze: per-sample channel means over time.
    Tensor z({n, cfg_.mid_channels});
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t c = 0; c < cfg_.mid_channels; ++c) {
        double acc = 0.0;
        const double* row = v_.data() + (in * cfg_.mid_channels + c) * len;
        for (std::size_t t = 0; t < len; ++t) acc += row[t];
        z(in, c) = acc / static_cast<double>(len);
      }
    }

    alpha_ = gate_sig_.forward(fc2_->forward(gate_relu_.forward(fc1_->forward(z))));

    Tensor m(v_.shape());
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t c = 0; c < cfg_.mid_channels; ++c) {
        const double a = alpha_(in, c);
        const double* vrow = v_.data() + (in * cfg_.mid_channels + c) * len;
        double* mrow = m.data() + (in * cfg_.mid_channels + c) * len;
        for (std::size_t t = 0; t < len; ++t) mrow[t] = a * vrow[t];
      }
    }

    Tensor shortcut = proj_ ? proj_->forward(x) : x;
    have_cache_ = true;
    return add(shortcut, m);
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "se block");
    const std::size_t n = v_.dim(0), len = v_.dim(2);

    // Through the scale: dM feeds both the gate and the main path.
    Tensor dalpha({n, cfg_.mid_channels});
    Tensor dv(v_.shape());
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t c = 0; c < cfg_.mid_channels; ++c) {
        const double a = alpha_(in, c);
        const std::size_t base = (in * cfg_.mid_channels + c) * len;
        double acc = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          acc += upstream[base + t] * v_[base + t];
          dv[base + t] = a * upstream[base + t];
        }
        dalpha(in, c) = acc;
      }
    }

    Tensor dz = fc1_->backward(gate_relu_.backward(fc2_->backward(gate_sig_.backward(dalpha))));

    // Squeeze spreads each channel-mean gradient uniformly over time.
    const double inv_len = 1.0 / static_cast<double>(len);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t c = 0; c < cfg_.mid_channels; ++c) {
        const double g = dz(in, c) * inv_len;
        const std::size_t base = (in * cfg_.mid_channels + c) * len;
        for (std::size_t t = 0; t < len; ++t) dv[base + t] += g;
      }
    }

    Tensor dx_main = conv1_->backward(relu1_.backward(conv2_->backward(dv)));
    if (proj_) {
      return add(dx_main, proj_->backward(upstream));
    }
    return add(dx_main, upstream);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    conv1_->collect_params(prefix + "conv1.", out);
    conv2_->collect_params(prefix + "conv2.", out);
    fc1_->collect_params(prefix + "fc1.", out);
    fc2_->collect_params(prefix + "fc2.", out);
    if (proj_) proj_->collect_params(prefix + "proj.", out);
  }

  /// Gate activations from the last forward, one weight per (sample, channel).
  const Tensor& excitation() const { return alpha_; }

 private:
  SeResNetConfig cfg_;
  std::unique_ptr<Conv1d> conv1_, conv2_, proj_;
  std::unique_ptr<Linear> fc1_, fc2_;
  Relu relu1_, gate_relu_;
  Sigmoid gate_sig_;
  Tensor v_, alpha_;
  bool have_cache_ = false;
};

/// One encoder block: three causal TCNs feed multi-head attention whose heads
/// share the full-width query/key/value, then residual + layernorm and a
/// position-wise FFN with the second residual + layernorm.
class EncoderBlock : public Layer {
 public:
  EncoderBlock(const EncoderConfig& cfg, std::size_t tokens, Rng& rng)
      : cfg_(cfg), tokens_(tokens) {
    cfg_.validate();
    if (tokens_ == 0) throw ConfigError("encoder block: token count must be positive");
    const Conv1dSpec tcn = Conv1dSpec::causal_spec(tokens_, tokens_, cfg_.tcn_kernel);
    tcn_q_ = std::make_unique<Conv1d>(tcn, rng);
    tcn_k_ = std::make_unique<Conv1d>(tcn, rng);
    tcn_v_ = std::make_unique<Conv1d>(tcn, rng);
    proj_ = std::make_unique<Linear>(cfg_.heads * cfg_.width, cfg_.width, rng, false);
    ln1_ = std::make_unique<LayerNorm>(cfg_.width);
    ln2_ = std::make_unique<LayerNorm>(cfg_.width);
    fc1_ = std::make_unique<Linear>(cfg_.width, cfg_.ffn_hidden, rng);
    fc2_ = std::make_unique<Linear>(cfg_.ffn_hidden, cfg_.width, rng);
    drop_ = std::make_unique<Dropout>(cfg_.dropout);
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) != tokens_ || x.dim(2) != cfg_.width) {
      throw DimensionError("encoder block: expected [N x " + std::to_string(tokens_) + " x " +
                           std::to_string(cfg_.width) + "], got " + x.shape_str());
    }
    const std::size_t n = x.dim(0), c = tokens_, l = cfg_.width;

    q_ = tcn_q_->forward(x);
    k_ = tcn_k_->forward(x);
    v_ = tcn_v_->forward(x);

    // Scaled dot-product energies over tokens, one attention map per sample.
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(l));
    Tensor energy({n, c, c});
    for (std::size_t in = 0; in < n; ++in) {
      const double* qs = q_.data() + in * c * l;
      const double* ks = k_.data() + in * c * l;
      double* es = energy.data() + in * c * c;
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          double acc = 0.0;
          const double* qi = qs + i * l;
          const double* kj = ks + j * l;
          for (std::size_t t = 0; t < l; ++t) acc += qi[t] * kj[t];
          es[i * c + j] = acc * inv_sqrt;
        }
      }
    }
    attn_ = softmax_rows(energy);

    // Weighted sum of values; all heads share q/k/v, so one head is computed
    // and the concat repeats it before the HL -> L projection.
    z_ = Tensor({n, c, l});
    for (std::size_t in = 0; in < n; ++in) {
      const double* as = attn_.data() + in * c * c;
      const double* vs = v_.data() + in * c * l;
      double* zs = z_.data() + in * c * l;
      for (std::size_t i = 0; i < c; ++i) {
        double* zrow = zs + i * l;
        std::fill(zrow, zrow + l, 0.0);
        for (std::size_t j = 0; j < c; ++j) {
          const double a = as[i * c + j];
          const double* vrow = vs + j * l;
          for (std::size_t t = 0; t < l; ++t) zrow[t] += a * vrow[t];
        }
      }
    }

    const std::size_t h = cfg_.heads;
    Tensor concat_heads({n, c, h * l});
    for (std::size_t row = 0; row < n * c; ++row) {
      const double* zrow = z_.data() + row * l;
      double* crow = concat_heads.data() + row * h * l;
      for (std::size_t head = 0; head < h; ++head) {
        std::copy(zrow, zrow + l, crow + head * l);
      }
    }
    Tensor mha = proj_->forward(concat_heads);

    Tensor n1 = ln1_->forward(add(q_, mha));
    Tensor f = fc2_->forward(drop_->forward(ffn_relu_.forward(fc1_->forward(n1))));
    Tensor out = ln2_->forward(add(n1, f));
    have_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream) override {
    require_forward_cache(have_cache_, "encoder block");
    const std::size_t n = q_.dim(0), c = tokens_, l = cfg_.width, h = cfg_.heads;

    Tensor ds2 = ln2_->backward(upstream);
    Tensor dn1 = ds2;
    Tensor df = ds2;
    Tensor dffn_in = fc1_->backward(ffn_relu_.backward(drop_->backward(fc2_->backward(df))));
    dn1 = add(dn1, dffn_in);

    Tensor ds1 = ln1_->backward(dn1);
    Tensor dq = ds1;
    Tensor dconcat = proj_->backward(ds1);

    // Heads are copies, so their gradients sum.
    Tensor dz({n, c, l});
    for (std::size_t row = 0; row < n * c; ++row) {
      const double* crow = dconcat.data() + row * h * l;
      double* zrow = dz.data() + row * l;
      for (std::size_t head = 0; head < h; ++head) {
        const double* src = crow + head * l;
        for (std::size_t t = 0; t < l; ++t) zrow[t] += src[t];
      }
    }

    // z = attn * v.
    Tensor dattn({n, c, c});
    Tensor dv({n, c, l});
    for (std::size_t in = 0; in < n; ++in) {
      const double* as = attn_.data() + in * c * c;
      const double* vs = v_.data() + in * c * l;
      const double* dzs = dz.data() + in * c * l;
      double* das = dattn.data() + in * c * c;
      double* dvs = dv.data() + in * c * l;
      for (std::size_t i = 0; i < c; ++i) {
        const double* dzrow = dzs + i * l;
        for (std::size_t j = 0; j < c; ++j) {
          const double* vrow = vs + j * l;
          double acc = 0.0;
          for (std::size_t t = 0; t < l; ++t) acc += dzrow[t] * vrow[t];
          das[i * c + j] = acc;
          const double a = as[i * c + j];
          double* dvrow = dvs + j * l;
          for (std::size_t t = 0; t < l; ++t) dvrow[t] += a * dzrow[t];
        }
      }
    }

    // Softmax rows, then the scaled dot product.
    Tensor denergy(dattn.shape());
    for (std::size_t row = 0; row < n * c; ++row) {
      const double* arow = attn_.data() + row * c;
      const double* urow = dattn.data() + row * c;
      double* erow = denergy.data() + row * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += urow[j] * arow[j];
      for (std::size_t j = 0; j < c; ++j) erow[j] = arow[j] * (urow[j] - dot);
    }

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(l));
    Tensor dk({n, c, l});
    for (std::size_t in = 0; in < n; ++in) {
      const double* es = denergy.data() + in * c * c;
      const double* qs = q_.data() + in * c * l;
      const double* ks = k_.data() + in * c * l;
      double* dqs = dq.data() + in * c * l;
      double* dks = dk.data() + in * c * l;
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double e = es[i * c + j] * inv_sqrt;
          const double* kj = ks + j * l;
          const double* qi = qs + i * l;
          double* dqi = dqs + i * l;
          double* dkj = dks + j * l;
          for (std::size_t t = 0; t < l; ++t) {
            dqi[t] += e * kj[t];
            dkj[t] += e * qi[t];
          }
        }
      }
    }

    Tensor dx = tcn_q_->backward(dq);
    dx = add(dx, tcn_k_->backward(dk));
    dx = add(dx, tcn_v_->backward(dv));
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    tcn_q_->collect_params(prefix + "tcn_q.", out);
    tcn_k_->collect_params(prefix + "tcn_k.", out);
    tcn_v_->collect_params(prefix + "tcn_v.", out);
    proj_->collect_params(prefix + "proj.", out);
    ln1_->collect_params(prefix + "ln1.", out);
    fc1_->collect_params(prefix + "ffn1.", out);
    fc2_->collect_params(prefix + "ffn2.", out);
    ln2_->collect_params(prefix + "ln2.", out);
  }

  void set_mode(Mode mode) override {
    Layer::set_mode(mode);
    drop_->set_mode(mode);
  }

  void set_seed(std::uint64_t seed) override { drop_->set_seed(seed); }

  /// Attention probabilities from the last forward, [N x tokens x tokens].
  const Tensor& attention() const { return attn_; }
  Conv1d& tcn_query() { return *tcn_q_; }
  Conv1d& tcn_key() { return *tcn_k_; }
  Conv1d& tcn_value() { return *tcn_v_; }

 private:
  EncoderConfig cfg_;
  std::size_t tokens_;
  std::unique_ptr<Conv1d> tcn_q_, tcn_k_, tcn_v_;
  std::unique_ptr<Linear> proj_, fc1_, fc2_;
  std::unique_ptr<LayerNorm> ln1_, ln2_;
  std::unique_ptr<Dropout> drop_;
  Relu ffn_relu_;
  Tensor q_, k_, v_, attn_, z_;
  bool have_cache_ = false;
};

/// Stack of encoder blocks.
class Encoder : public Layer {
 public:
  Encoder(const EncoderConfig& cfg, std::size_t tokens, Rng& rng) {
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
      blocks_.push_back(std::make_unique<EncoderBlock>(cfg, tokens, rng));
    }
  }

  Tensor forward(const Tensor& x) override {
    Tensor y = x;
    for (auto& b : blocks_) y = b->forward(y);
    return y;
  }

  Tensor backward(const Tensor& upstream) override {
    Tensor g = upstream;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i]->collect_params(prefix + "block" + std::to_string(i) + ".", out);
    }
  }

  void set_mode(Mode mode) override {
    Layer::set_mode(mode);
    for (auto& b : blocks_) b->set_mode(mode);
  }

  void set_seed(std::uint64_t seed) override {
    for (std::size_t i = 0; i < blocks_.size(); ++i) b_seed(i, seed);
  }

  EncoderBlock& block(std::size_t i) { return *blocks_.at(i); }
  std::size_t size() const { return blocks_.size(); }

 private:
  void b_seed(std::size_t i, std::uint64_t seed) { blocks_[i]->set_seed(derive_seed(seed, i)); }

  std::vector<std::unique_ptr<EncoderBlock>> blocks_;
};

/// Two fully connected layers over the flattened encoder output. Produces
/// logits; the softmax lives in the loss or in PainAttnNet::forward.
class Classifier : public Layer {
 public:
  Classifier(std::size_t channels, std::size_t width, std::size_t hidden,
             std::size_t num_classes, Rng& rng)
      : flat_(channels * width) {
    fc1_ = std::make_unique<Linear>(flat_, hidden, rng);
    fc2_ = std::make_unique<Linear>(hidden, num_classes, rng);
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) * x.dim(2) != flat_) {
      throw DimensionError("classifier: expected [N x C x L] with C*L = " +
                           std::to_string(flat_) + ", got " + x.shape_str());
    }
    input_shape_ = x.shape();
    Tensor flat = x.reshape({x.dim(0), flat_});
    return fc2_->forward(relu_.forward(fc1_->forward(flat)));
  }

  Tensor backward(const Tensor& upstream) override {
    Tensor g = fc1_->backward(relu_.backward(fc2_->backward(upstream)));
    return g.reshape(input_shape_);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    fc1_->collect_params(prefix + "fc1.", out);
    fc2_->collect_params(prefix + "fc2.", out);
  }

 private:
  std::size_t flat_;
  std::unique_ptr<Linear> fc1_, fc2_;
  Relu relu_;
  std::vector<std::size_t> input_shape_;
};

/// The full network. forward() yields class probabilities; training code uses
/// forward_logits() with the fused softmax + cross-entropy gradient and calls
/// backward_logits() with dL/dlogits.
class PainAttnNet {
 public:
  PainAttnNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x696e6974ULL));
    mscn_ = std::make_unique<Mscn>(cfg_.mscn, rng);
    se_ = std::make_unique<SeBlock>(cfg_.se, rng);
    encoder_ = std::make_unique<Encoder>(cfg_.encoder, cfg_.se.mid_channels, rng);
    head_ = std::make_unique<Classifier>(cfg_.se.mid_channels, cfg_.encoder.width,
                                         cfg_.classifier_hidden, cfg_.num_classes, rng);
    set_dropout_seed(derive_seed(seed, 0x64726f70ULL));
  }

  const ModelConfig& config() const { return cfg_; }

  Tensor forward_logits(const Tensor& x) {
    return head_->forward(encoder_->forward(se_->forward(mscn_->forward(x))));
  }

  Tensor forward(const Tensor& x) { return softmax_rows(forward_logits(x)); }

  Tensor backward_logits(const Tensor& dlogits) {
    return mscn_->backward(se_->backward(encoder_->backward(head_->backward(dlogits))));
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    mscn_->collect_params("mscn.", out);
    se_->collect_params("se.", out);
    encoder_->collect_params("encoder.", out);
    head_->collect_params("head.", out);
    return out;
  }

  std::vector<BufferRef> buffers() {
    std::vector<BufferRef> out;
    mscn_->collect_buffers("mscn.", out);
    se_->collect_buffers("se.", out);
    encoder_->collect_buffers("encoder.", out);
    head_->collect_buffers("head.", out);
    return out;
  }

  void zero_grads() {
    for (ParamRef& p : parameters()) {
      std::fill(p.grad->vec().begin(), p.grad->vec().end(), 0.0);
    }
  }

  void set_mode(Mode mode) {
    mscn_->set_mode(mode);
    se_->set_mode(mode);
    encoder_->set_mode(mode);
    head_->set_mode(mode);
  }

  void set_dropout_seed(std::uint64_t seed) {
    mscn_->set_seed(derive_seed(seed, 1));
    encoder_->set_seed(derive_seed(seed, 2));
  }

  Mscn& mscn() { return *mscn_; }
  SeBlock& se_block() { return *se_; }
  Encoder& encoder() { return *encoder_; }
  Classifier& head() { return *head_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Mscn> mscn_;
  std::unique_ptr<SeBlock> se_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Classifier> head_;
};

/// Presents a whole network as a single Layer (input -> logits), mainly so
/// the finite-difference checker can probe the full composition end to end.
class LogitsAdapter : public Layer {
 public:
  LogitsAdapter(const ModelConfig& cfg, std::uint64_t seed) : model_(cfg, seed) {}

  Tensor forward(const Tensor& x) override { return model_.forward_logits(x); }
  Tensor backward(const Tensor& upstream) override { return model_.backward_logits(upstream); }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    for (const ParamRef& p : model_.parameters()) {
      out.push_back(ParamRef{prefix + p.name, p.value, p.grad});
    }
  }

  void set_mode(Mode m) override { model_.set_mode(m); }
  void set_seed(std::uint64_t seed) override { model_.set_dropout_seed(seed); }

  PainAttnNet& model() { return model_; }

 private:
  PainAttnNet model_;
};

}  // namespace pan
