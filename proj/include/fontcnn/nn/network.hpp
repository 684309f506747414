#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/nn/layers.hpp"
#include "fontcnn/nn/topology.hpp"
#include "fontcnn/random.hpp"

namespace fontcnn::nn {

template <typename T>
struct NamedParam {
  std::string name;  // "<layer-index>.<kind>.<param>"
  std::size_t layer = 0;
  Param<T>* param = nullptr;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::size_t layer = 0;
  Tensor<T>* tensor = nullptr;
};

/// Sequential network ending in a softmax layer, trained with softmax
/// cross-entropy. Each layer maps x_{l-1} to x_l; residual blocks add their
/// input back onto the branch output.
template <typename T>
class Network {
 public:
  Network() = default;

  /// Builds from a topology; all shape checks happen here.
  explicit Network(const Topology& topo) : input_(topo.input) {
    FeatureShape shape = topo.input;
    for (std::size_t i = 0; i < topo.layers.size(); ++i) {
      try {
        layers_.push_back(make_layer<T>(topo.layers[i], shape));
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + describe(topo.layers[i]) + "): " + e.what());
      }
      shape = layers_.back()->output_shape();
    }
    check_head();
  }

  /// Assembles a network from pre-built layers (each built for the previous
  /// layer's output shape).
  Network(FeatureShape input, std::vector<std::unique_ptr<Layer<T>>> layers)
      : input_(input), layers_(std::move(layers)) {
    check_head();
  }

  Network(const Network& o) : input_(o.input_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& o) {
    if (this != &o) *this = Network(o);
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  FeatureShape input_shape() const { return input_; }
  std::size_t num_classes() const { return layers_.back()->output_shape().c; }
  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  std::string topology_text() const {
    std::string out = "input " + std::to_string(input_.c) + " " + std::to_string(input_.h) + " " + std::to_string(input_.w) + "\n";
    for (const auto& l : layers_) out += l->describe() + "\n";
    return out;
  }

  /// Index of the final fully connected layer (the classifier).
  std::size_t classifier_layer() const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (layers_[i]->kind() == LayerKind::fully_connected) return i;
    }
    throw ShapeError("network has no fully connected classifier layer");
  }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto* p : layers_[i]->params()) {
        out.push_back({std::to_string(i) + "." + to_string(layers_[i]->kind()) + "." + p->name, i, p});
      }
    }
    return out;
  }

  std::vector<NamedBuffer<T>> buffers() {
    std::vector<NamedBuffer<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto b : layers_[i]->buffers()) {
        out.push_back({std::to_string(i) + "." + to_string(layers_[i]->kind()) + "." + b.name, i, b.tensor});
      }
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.param->value.size();
    return n;
  }

  /// Fan-in Gaussian initialization of every layer from one seed.
  void init(std::uint64_t seed) {
    RngStream root(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) init_layer(i, root.split(i));
  }

  void init_layer(std::size_t i, RngStream rng) {
    layers_.at(i)->init(rng);
    for (auto* p : layers_[i]->params()) p->momentum.fill(T(0));
  }

  void zero_grad() {
    for (auto& p : parameters()) p.param->grad.fill(T(0));
  }

  /// Runs the batch (N, C, H, W) through every layer. Returns per-sample
  /// class probabilities (N, classes, 1, 1).
  const Tensor<T>& forward(const Tensor<T>& input, bool training) {
    const FeatureShape got = feature_shape(input.shape());
    if (input.rank() != 4 || !(got == input_)) {
      throw ShapeError("network input " + shape_string(input.shape()) + " does not match " + input_.str());
    }
    acts_.resize(layers_.size() + 1);
    acts_[0] = input;
    training_ = training;
    return forward_from(0);
  }

  /// Re-runs layers [first, end) from the cached activation x_first.
  const Tensor<T>& forward_from(std::size_t first) {
    for (std::size_t i = first; i < layers_.size(); ++i) layers_[i]->forward(acts_[i], acts_[i + 1], training_);
    return acts_.back();
  }

  /// Mean softmax cross-entropy of the last forward pass.
  double loss(std::span<const int> labels) const {
    const Tensor<T>& logits = acts_[acts_.size() - 2];
    const std::size_t batch = logits.dim(0);
    const std::size_t c = num_classes();
    check_labels(labels, batch, c);
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* x = logits.data() + n * c;
      double mx = x[0];
      for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(x[i]));
      double z = 0.0;
      for (std::size_t i = 0; i < c; ++i) z += std::exp(static_cast<double>(x[i]) - mx);
      total += -(static_cast<double>(x[static_cast<std::size_t>(labels[n])]) - mx - std::log(z));
    }
    return total / static_cast<double>(batch);
  }

  /// Backpropagates mean cross-entropy through the cached forward pass.
  /// Parameter gradients are overwritten (not accumulated across calls).
  /// Returns the loss.
  double backward(std::span<const int> labels, bool keep_activation_grads = false) {
    if (acts_.size() != layers_.size() + 1) throw Error("backward called without a forward pass");
    const double l = loss(labels);
    zero_grad();
    const std::size_t batch = acts_[0].dim(0);
    const std::size_t c = num_classes();
    const std::size_t last = layers_.size() - 1;

    // Softmax + cross-entropy: dL/dlogits = (p - onehot) / batch.
    Tensor<T> grad(acts_[last].shape());
    const Tensor<T>& p = acts_.back();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < c; ++i)
        grad[n * c + i] = (p[n * c + i] - (static_cast<int>(i) == labels[n] ? T(1) : T(0))) / static_cast<T>(batch);

    if (keep_activation_grads) act_grads_.assign(layers_.size() + 1, Tensor<T>());
    if (keep_activation_grads) act_grads_[last] = grad;
    Tensor<T> next;
    for (std::size_t i = last; i-- > 0;) {
      const bool need_input_grad = i > 0 || keep_activation_grads;
      layers_[i]->backward(acts_[i], acts_[i + 1], grad, need_input_grad ? &next : nullptr);
      if (!need_input_grad) break;
      std::swap(grad, next);
      if (keep_activation_grads) act_grads_[i] = grad;
    }
    return l;
  }

  /// x_i for i in [0, num_layers]; x_0 is the input, x_L the probabilities.
  Tensor<T>& activation(std::size_t i) { return acts_.at(i); }
  /// dL/dx_i from the last backward(…, true).
  const Tensor<T>& activation_grad(std::size_t i) const { return act_grads_.at(i); }

  /// Branch decisions of layers [first, end) in the last forward pass.
  std::vector<std::int64_t> pattern(std::size_t first = 0) const {
    std::vector<std::int64_t> sig;
    for (std::size_t i = first; i < layers_.size(); ++i) layers_[i]->append_pattern(sig);
    return sig;
  }

  /// Copies parameter and buffer values from another network (any scalar
  /// type) with an identical topology.
  template <typename U>
  void copy_values_from(Network<U>& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size() || topology_text() != other.topology_text()) {
      throw ShapeError("copy_values_from: topology mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const auto& s = src[i].param->value;
      auto& d = dst[i].param->value;
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(s[k]);
    }
    auto db = buffers();
    auto sb = other.buffers();
    for (std::size_t i = 0; i < db.size(); ++i)
      for (std::size_t k = 0; k < db[i].tensor->size(); ++k) (*db[i].tensor)[k] = static_cast<T>((*sb[i].tensor)[k]);
  }

 private:
  void check_head() const {
    if (layers_.empty()) throw ShapeError("network has no layers");
    if (layers_.back()->kind() != LayerKind::softmax) throw ShapeError("network must end with a softmax layer");
  }

  static void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
    if (labels.size() != batch) throw DataError("label count does not match batch size");
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw DataError("label " + std::to_string(l) + " outside class range [0," + std::to_string(classes) + ")");
      }
    }
  }

  FeatureShape input_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Tensor<T>> acts_;
  std::vector<Tensor<T>> act_grads_;
  bool training_ = false;
};

}  // namespace fontcnn::nn
