#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/nn/gemm.hpp"
#include "fontcnn/nn/tensor.hpp"
#include "fontcnn/random.hpp"

namespace fontcnn::nn {

enum class LayerKind { conv, relu, maxpool, fully_connected, batchnorm, residual_block, global_avgpool, softmax };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::fully_connected: return "fc";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::residual_block: return "residual";
    case LayerKind::global_avgpool: return "global_avgpool";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

/// Trainable tensor with its gradient and momentum buffer.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;
  bool decay = true;  // L2 weight decay applies (weights only)

  Param() = default;
  Param(std::string n, std::vector<std::size_t> shape, bool wd)
      : name(std::move(n)), value(shape), grad(shape), momentum(shape), decay(wd) {}
};

/// Non-trainable state that still belongs in a checkpoint.
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

/// One stage of a network. Layers cache whatever they need from the last
/// forward call; backward must be called with the same input/output.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  /// Topology-file description of the layer.
  virtual std::string describe() const = 0;
  virtual FeatureShape output_shape() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual void forward(const Tensor<T>& in, Tensor<T>& out, bool training) = 0;
  /// Accumulates parameter gradients; writes dL/d(in) into *din when given.
  virtual void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout, Tensor<T>* din) = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  virtual std::vector<Buffer<T>> buffers() { return {}; }
  virtual void init(RngStream& /*rng*/) {}
  /// Appends the discrete decisions (relu gates, pool argmax) taken by the
  /// last forward pass; used to detect kinks during finite differencing.
  virtual void append_pattern(std::vector<std::int64_t>& /*sig*/) const {}
};

namespace detail {

template <typename T>
void init_he(Tensor<T>& w, std::size_t fan_in, RngStream& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.span()) v = static_cast<T>(rng.normal(0.0, sd));
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(FeatureShape in, std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t pad)
      : in_(in), out_c_(out_channels), k_(kernel), stride_(stride), pad_(pad),
        weight_("weight", {out_channels, in.c, kernel, kernel}, true), bias_("bias", {out_channels}, false) {
    if (out_channels == 0 || kernel == 0 || stride == 0) throw ShapeError("conv: zero-sized hyperparameter");
    out_ = {out_c_, detail::conv_out(in.h, k_, stride_, pad_), detail::conv_out(in.w, k_, stride_, pad_)};
    if (out_.h == 0 || out_.w == 0) {
      throw ShapeError("conv kernel " + std::to_string(k_) + " does not fit input " + in.str());
    }
  }

  LayerKind kind() const override { return LayerKind::conv; }
  std::string describe() const override {
    return "conv out=" + std::to_string(out_c_) + " kernel=" + std::to_string(k_) + " stride=" + std::to_string(stride_) +
           " pad=" + std::to_string(pad_);
  }
  FeatureShape output_shape() const override { return out_; }
  std::unique_ptr<Layer<T>> clone() const override {
    auto c = std::make_unique<Conv2d>(*this);
    c->cols_ = Tensor<T>();
    return c;
  }
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

  void init(RngStream& rng) override {
    detail::init_he(weight_.value, in_.c * k_ * k_, rng);
    bias_.value.fill(T(0));
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool /*training*/) override {
    const std::size_t batch = in.dim(0);
    const std::size_t kdim = in_.c * k_ * k_;
    const std::size_t hw = out_.h * out_.w;
    out.resize({batch, out_.c, out_.h, out_.w});
    cols_.resize({batch, kdim, hw});
    for (std::size_t n = 0; n < batch; ++n) {
      T* col = cols_.sample(n);
      im2col(in.sample(n), col);
      T* o = out.sample(n);
      for (std::size_t c = 0; c < out_.c; ++c) std::fill(o + c * hw, o + (c + 1) * hw, bias_.value[c]);
      gemm::nn(out_.c, hw, kdim, weight_.value.data(), col, o);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>& /*out*/, const Tensor<T>& dout, Tensor<T>* din) override {
    const std::size_t batch = in.dim(0);
    const std::size_t kdim = in_.c * k_ * k_;
    const std::size_t hw = out_.h * out_.w;
    if (din) {
      din->resize(in.shape());
      din->fill(T(0));
    }
    std::vector<T> dcol(din ? kdim * hw : 0);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* d = dout.sample(n);
      gemm::nt(out_.c, kdim, hw, d, cols_.sample(n), weight_.grad.data());
      for (std::size_t c = 0; c < out_.c; ++c) {
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) acc += d[c * hw + i];
        bias_.grad[c] += acc;
      }
      if (din) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        gemm::tn(kdim, hw, out_.c, weight_.value.data(), d, dcol.data());
        col2im(dcol.data(), din->sample(n));
      }
    }
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  void im2col(const T* img, T* col) const {
    const std::size_t hw = out_.h * out_.w;
    for (std::size_t c = 0; c < in_.c; ++c) {
      for (std::size_t ky = 0; ky < k_; ++ky) {
        for (std::size_t kx = 0; kx < k_; ++kx) {
          T* row = col + ((c * k_ + ky) * k_ + kx) * hw;
          for (std::size_t oy = 0; oy < out_.h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
            T* dst = row + oy * out_.w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_.h)) {
              std::fill(dst, dst + out_.w, T(0));
              continue;
            }
            const T* src = img + (c * in_.h + static_cast<std::size_t>(iy)) * in_.w;
            for (std::size_t ox = 0; ox < out_.w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_.w)) ? T(0) : src[ix];
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, T* img) const {
    const std::size_t hw = out_.h * out_.w;
    for (std::size_t c = 0; c < in_.c; ++c) {
      for (std::size_t ky = 0; ky < k_; ++ky) {
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const T* row = col + ((c * k_ + ky) * k_ + kx) * hw;
          for (std::size_t oy = 0; oy < out_.h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_.h)) continue;
            T* dst = img + (c * in_.h + static_cast<std::size_t>(iy)) * in_.w;
            const T* src = row + oy * out_.w;
            for (std::size_t ox = 0; ox < out_.w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(in_.w)) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }

  FeatureShape in_;
  FeatureShape out_;
  std::size_t out_c_, k_, stride_, pad_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> cols_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Relu final : public Layer<T> {
 public:
  explicit Relu(FeatureShape in) : shape_(in) {}
  LayerKind kind() const override { return LayerKind::relu; }
  std::string describe() const override { return "relu"; }
  FeatureShape output_shape() const override { return shape_; }
  std::unique_ptr<Layer<T>> clone() const override {
    auto c = std::make_unique<Relu>(*this);
    c->last_in_ = nullptr;
    return c;
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    out.resize(in.shape());
    const T* x = in.data();
    T* y = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    last_in_ = &in;
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>* din) override {
    if (!din) return;
    din->resize(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) (*din)[i] = in[i] > T(0) ? dout[i] : T(0);
  }

  void append_pattern(std::vector<std::int64_t>& sig) const override {
    if (!last_in_) return;
    for (std::size_t i = 0; i < last_in_->size(); ++i) sig.push_back((*last_in_)[i] > T(0));
  }

 private:
  FeatureShape shape_;
  const Tensor<T>* last_in_ = nullptr;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(FeatureShape in, std::size_t window, std::size_t stride) : in_(in), window_(window), stride_(stride) {
    if (window == 0 || stride == 0) throw ShapeError("maxpool: zero-sized hyperparameter");
    if (in.h < window || in.w < window) throw ShapeError("maxpool window " + std::to_string(window) + " exceeds input " + in.str());
    out_ = {in.c, (in.h - window) / stride + 1, (in.w - window) / stride + 1};
  }

  LayerKind kind() const override { return LayerKind::maxpool; }
  std::string describe() const override {
    return "maxpool window=" + std::to_string(window_) + " stride=" + std::to_string(stride_);
  }
  FeatureShape output_shape() const override { return out_; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const std::size_t batch = in.dim(0);
    out.resize({batch, out_.c, out_.h, out_.w});
    argmax_.assign(out.size(), 0);
    std::size_t o = 0;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < in_.c; ++c) {
        const std::size_t plane = (n * in_.c + c) * in_.h * in_.w;
        for (std::size_t oy = 0; oy < out_.h; ++oy) {
          for (std::size_t ox = 0; ox < out_.w; ++ox, ++o) {
            std::size_t best = plane + (oy * stride_) * in_.w + ox * stride_;
            for (std::size_t ky = 0; ky < window_; ++ky) {
              for (std::size_t kx = 0; kx < window_; ++kx) {
                const std::size_t idx = plane + (oy * stride_ + ky) * in_.w + ox * stride_ + kx;
                if (in[idx] > in[best]) best = idx;
              }
            }
            argmax_[o] = best;
            out[o] = in[best];
          }
        }
      }
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>* din) override {
    if (!din) return;
    din->resize(in.shape());
    din->fill(T(0));
    for (std::size_t o = 0; o < dout.size(); ++o) (*din)[argmax_[o]] += dout[o];
  }

  void append_pattern(std::vector<std::int64_t>& sig) const override {
    sig.insert(sig.end(), argmax_.begin(), argmax_.end());
  }

 private:
  FeatureShape in_;
  FeatureShape out_;
  std::size_t window_, stride_;
  std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

template <typename T>
class FullyConnected final : public Layer<T> {
 public:
  FullyConnected(FeatureShape in, std::size_t out_features)
      : in_features_(in.size()), out_features_(out_features),
        weight_("weight", {out_features, in.size()}, true), bias_("bias", {out_features}, false) {
    if (out_features == 0) throw ShapeError("fc: zero outputs");
  }

  LayerKind kind() const override { return LayerKind::fully_connected; }
  std::string describe() const override { return "fc out=" + std::to_string(out_features_); }
  FeatureShape output_shape() const override { return {out_features_, 1, 1}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FullyConnected>(*this); }
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void init(RngStream& rng) override {
    detail::init_he(weight_.value, in_features_, rng);
    bias_.value.fill(T(0));
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const std::size_t batch = in.dim(0);
    out.resize({batch, out_features_, 1, 1});
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t j = 0; j < out_features_; ++j) out[n * out_features_ + j] = bias_.value[j];
    gemm::nt(batch, out_features_, in_features_, in.data(), weight_.value.data(), out.data());
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>* din) override {
    const std::size_t batch = in.dim(0);
    gemm::tn(out_features_, in_features_, batch, dout.data(), in.data(), weight_.grad.data());
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t j = 0; j < out_features_; ++j) bias_.grad[j] += dout[n * out_features_ + j];
    if (din) {
      din->resize(in.shape());
      din->fill(T(0));
      gemm::nn(batch, in_features_, out_features_, dout.data(), weight_.value.data(), din->data());
    }
  }

 private:
  std::size_t in_features_, out_features_;
  Param<T> weight_;
  Param<T> bias_;
};

// ---------------------------------------------------------------------------

/// Spatial batch normalization. Training mode normalizes with batch
/// statistics and updates running estimates; inference mode is a fixed
/// per-channel affine map.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kRunningMomentum = 0.1;

  explicit BatchNorm2d(FeatureShape in)
      : shape_(in), gamma_("gamma", {in.c}, false), beta_("beta", {in.c}, false),
        running_mean_({in.c}, T(0)), running_var_({in.c}, T(1)) {
    gamma_.value.fill(T(1));
  }

  LayerKind kind() const override { return LayerKind::batchnorm; }
  std::string describe() const override { return "batchnorm"; }
  FeatureShape output_shape() const override { return shape_; }
  std::unique_ptr<Layer<T>> clone() const override {
    auto c = std::make_unique<BatchNorm2d>(*this);
    c->xhat_ = Tensor<T>();
    return c;
  }
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<Buffer<T>> buffers() override { return {{"running_mean", &running_mean_}, {"running_var", &running_var_}}; }
  void init(RngStream&) override {
    gamma_.value.fill(T(1));
    beta_.value.fill(T(0));
    running_mean_.fill(T(0));
    running_var_.fill(T(1));
  }

  /// Disables running-statistic updates (finite differencing re-runs forward).
  void freeze_running_stats(bool frozen) { frozen_ = frozen; }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override {
    const std::size_t batch = in.dim(0);
    const std::size_t hw = shape_.h * shape_.w;
    const std::size_t m = batch * hw;
    out.resize(in.shape());
    xhat_.resize(in.shape());
    inv_std_.assign(shape_.c, 0.0);
    training_ = training;
    for (std::size_t c = 0; c < shape_.c; ++c) {
      double mean, var;
      if (training) {
        double s = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* x = in.data() + (n * shape_.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) s += x[i];
        }
        mean = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* x = in.data() + (n * shape_.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double d = x[i] - mean;
            ss += d * d;
          }
        }
        var = ss / static_cast<double>(m);
        if (!frozen_) {
          const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
          running_mean_[c] = static_cast<T>((1 - kRunningMomentum) * running_mean_[c] + kRunningMomentum * mean);
          running_var_[c] = static_cast<T>((1 - kRunningMomentum) * running_var_[c] + kRunningMomentum * unbiased);
        }
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const double inv_std = 1.0 / std::sqrt(var + kEps);
      inv_std_[c] = inv_std;
      const T g = gamma_.value[c];
      const T b = beta_.value[c];
      const T tm = static_cast<T>(mean);
      const T ti = static_cast<T>(inv_std);
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t off = (n * shape_.c + c) * hw;
        const T* x = in.data() + off;
        T* xh = xhat_.data() + off;
        T* y = out.data() + off;
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (x[i] - tm) * ti;
          y[i] = g * xh[i] + b;
        }
      }
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>* din) override {
    const std::size_t batch = in.dim(0);
    const std::size_t hw = shape_.h * shape_.w;
    const double m = static_cast<double>(batch * hw);
    if (din) din->resize(in.shape());
    for (std::size_t c = 0; c < shape_.c; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t off = (n * shape_.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_dy += dout[off + i];
          sum_dy_xhat += static_cast<double>(dout[off + i]) * xhat_[off + i];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
      beta_.grad[c] += static_cast<T>(sum_dy);
      if (!din) continue;
      const double g = gamma_.value[c];
      const double inv_std = inv_std_[c];
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t off = (n * shape_.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          double dx;
          if (training_) {
            dx = g * inv_std / m * (m * dout[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat);
          } else {
            dx = g * inv_std * dout[off + i];
          }
          (*din)[off + i] = static_cast<T>(dx);
        }
      }
    }
  }

  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }

 private:
  FeatureShape shape_;
  Param<T> gamma_;
  Param<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  bool training_ = true;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  explicit GlobalAvgPool(FeatureShape in) : in_(in) {}
  LayerKind kind() const override { return LayerKind::global_avgpool; }
  std::string describe() const override { return "global_avgpool"; }
  FeatureShape output_shape() const override { return {in_.c, 1, 1}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const std::size_t batch = in.dim(0);
    const std::size_t hw = in_.h * in_.w;
    out.resize({batch, in_.c, 1, 1});
    for (std::size_t p = 0; p < batch * in_.c; ++p) {
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += in[p * hw + i];
      out[p] = acc / static_cast<T>(hw);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>* din) override {
    if (!din) return;
    const std::size_t hw = in_.h * in_.w;
    din->resize(in.shape());
    for (std::size_t p = 0; p < dout.size(); ++p) {
      const T g = dout[p] / static_cast<T>(hw);
      std::fill(din->data() + p * hw, din->data() + (p + 1) * hw, g);
    }
  }

 private:
  FeatureShape in_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Softmax final : public Layer<T> {
 public:
  explicit Softmax(FeatureShape in) : in_(in) {
    if (in.h != 1 || in.w != 1) throw ShapeError("softmax expects a flat (C,1,1) input, got " + in.str());
  }
  LayerKind kind() const override { return LayerKind::softmax; }
  std::string describe() const override { return "softmax"; }
  FeatureShape output_shape() const override { return in_; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Softmax>(*this); }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const std::size_t batch = in.dim(0);
    const std::size_t c = in_.c;
    out.resize(in.shape());
    for (std::size_t n = 0; n < batch; ++n) {
      const T* x = in.data() + n * c;
      T* y = out.data() + n * c;
      const T mx = *std::max_element(x, x + c);
      double z = 0.0;
      for (std::size_t i = 0; i < c; ++i) z += std::exp(static_cast<double>(x[i] - mx));
      for (std::size_t i = 0; i < c; ++i) y[i] = static_cast<T>(std::exp(static_cast<double>(x[i] - mx)) / z);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout, Tensor<T>* din) override {
    if (!din) return;
    const std::size_t batch = in.dim(0);
    const std::size_t c = in_.c;
    din->resize(in.shape());
    for (std::size_t n = 0; n < batch; ++n) {
      const T* p = out.data() + n * c;
      const T* g = dout.data() + n * c;
      double dot = 0.0;
      for (std::size_t i = 0; i < c; ++i) dot += static_cast<double>(p[i]) * g[i];
      for (std::size_t i = 0; i < c; ++i) (*din)[n * c + i] = static_cast<T>(p[i] * (g[i] - dot));
    }
  }

 private:
  FeatureShape in_;
};

// ---------------------------------------------------------------------------

/// out = F(x) + shortcut(x), with F = conv3x3(stride) -> bn -> relu ->
/// conv3x3 -> bn. The shortcut is the identity when shapes agree and a 1x1
/// projection convolution otherwise.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(FeatureShape in, std::size_t out_channels, std::size_t stride)
      : in_(in), out_c_(out_channels), stride_(stride) {
    branch_.push_back(std::make_unique<Conv2d<T>>(in, out_channels, 3, stride, 1));
    FeatureShape s = branch_.back()->output_shape();
    branch_.push_back(std::make_unique<BatchNorm2d<T>>(s));
    branch_.push_back(std::make_unique<Relu<T>>(s));
    branch_.push_back(std::make_unique<Conv2d<T>>(s, out_channels, 3, 1, 1));
    branch_.push_back(std::make_unique<BatchNorm2d<T>>(s));
    out_ = s;
    if (out_channels != in.c || stride != 1) projection_ = std::make_unique<Conv2d<T>>(in, out_channels, 1, stride, 0);
    if (projection_ && !(projection_->output_shape() == out_)) {
      throw ShapeError("residual projection shape " + projection_->output_shape().str() + " != branch " + out_.str());
    }
  }

  ResidualBlock(const ResidualBlock& o) : in_(o.in_), out_(o.out_), out_c_(o.out_c_), stride_(o.stride_) {
    for (const auto& l : o.branch_) branch_.push_back(l->clone());
    if (o.projection_) projection_ = o.projection_->clone();
  }

  LayerKind kind() const override { return LayerKind::residual_block; }
  std::string describe() const override {
    return "residual out=" + std::to_string(out_c_) + " stride=" + std::to_string(stride_);
  }
  FeatureShape output_shape() const override { return out_; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  bool has_projection() const { return projection_ != nullptr; }

  std::vector<Param<T>*> params() override {
    std::vector<Param<T>*> out;
    for (auto& [name, layer] : children()) {
      for (auto* q : layer->params()) {
        q->name = name + "." + leaf_name(q->name);
        out.push_back(q);
      }
    }
    return out;
  }

  std::vector<Buffer<T>> buffers() override {
    std::vector<Buffer<T>> out;
    for (auto& [name, layer] : children()) {
      for (auto b : layer->buffers()) out.push_back({name + "." + b.name, b.tensor});
    }
    return out;
  }

  void init(RngStream& rng) override {
    std::uint64_t i = 0;
    for (auto& [name, layer] : children()) {
      RngStream r = rng.split(i++);
      layer->init(r);
    }
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override {
    acts_.resize(branch_.size() + 1);
    const Tensor<T>* cur = &in;
    for (std::size_t i = 0; i < branch_.size(); ++i) {
      branch_[i]->forward(*cur, acts_[i + 1], training);
      cur = &acts_[i + 1];
    }
    const Tensor<T>* shortcut = &in;
    if (projection_) {
      projection_->forward(in, proj_out_, training);
      shortcut = &proj_out_;
    }
    out.resize(cur->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*cur)[i] + (*shortcut)[i];
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>* din) override {
    // The skip connection routes dout unchanged to both the branch and the
    // shortcut; their input gradients add.
    Tensor<T> grad = dout;
    Tensor<T> next;
    for (std::size_t i = branch_.size(); i-- > 0;) {
      const Tensor<T>& lin = i == 0 ? in : acts_[i];
      const bool need = i > 0 || din != nullptr;
      branch_[i]->backward(lin, acts_[i + 1], grad, need ? &next : nullptr);
      if (need) std::swap(grad, next);
    }
    if (projection_) {
      Tensor<T> dshort;
      projection_->backward(in, proj_out_, dout, din ? &dshort : nullptr);
      if (din) {
        *din = std::move(grad);
        for (std::size_t i = 0; i < din->size(); ++i) (*din)[i] += dshort[i];
      }
    } else if (din) {
      *din = std::move(grad);
      for (std::size_t i = 0; i < din->size(); ++i) (*din)[i] += dout[i];
    }
  }

  void append_pattern(std::vector<std::int64_t>& sig) const override {
    for (const auto& l : branch_) l->append_pattern(sig);
  }

  Layer<T>& branch_layer(std::size_t i) { return *branch_.at(i); }
  Layer<T>* projection() { return projection_.get(); }

 private:
  static std::string leaf_name(const std::string& n) {
    const auto pos = n.rfind('.');
    return pos == std::string::npos ? n : n.substr(pos + 1);
  }

  std::vector<std::pair<std::string, Layer<T>*>> children() {
    std::vector<std::pair<std::string, Layer<T>*>> out = {
        {"conv1", branch_[0].get()}, {"bn1", branch_[1].get()}, {"conv2", branch_[3].get()}, {"bn2", branch_[4].get()}};
    if (projection_) out.emplace_back("projection", projection_.get());
    return out;
  }

  FeatureShape in_;
  FeatureShape out_;
  std::size_t out_c_, stride_;
  std::vector<std::unique_ptr<Layer<T>>> branch_;
  std::unique_ptr<Layer<T>> projection_;
  std::vector<Tensor<T>> acts_;
  Tensor<T> proj_out_;
};

}  // namespace fontcnn::nn
