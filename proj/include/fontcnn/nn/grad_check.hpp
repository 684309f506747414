#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/nn/network.hpp"
#include "fontcnn/nn/topology.hpp"
#include "fontcnn/random.hpp"

namespace fontcnn::nn {

struct GradCheckEntry {
  std::string kind;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a relu/pool kink
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // sorted by kind
  double tolerance = 0.0;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(),
                       [&](const GradCheckEntry& e) { return e.checked > 0 && e.max_rel_error < tolerance; });
  }

  const GradCheckEntry* find(const std::string& kind) const {
    for (const auto& e : entries)
      if (e.kind == kind) return &e;
    return nullptr;
  }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& e : entries) {
      os << e.kind << "\tmax_rel_error=" << e.max_rel_error << "\tchecked=" << e.checked << "\tskipped=" << e.skipped
         << "\t" << (e.checked > 0 && e.max_rel_error < tolerance ? "PASS" : "FAIL") << "\n";
    }
    return os.str();
  }

  void merge(const GradCheckReport& o) {
    for (const auto& e : o.entries) {
      auto it = std::find_if(entries.begin(), entries.end(), [&](const GradCheckEntry& x) { return x.kind == e.kind; });
      if (it == entries.end()) {
        entries.push_back(e);
      } else {
        it->max_rel_error = std::max(it->max_rel_error, e.max_rel_error);
        it->checked += e.checked;
        it->skipped += e.skipped;
      }
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.kind < b.kind; });
  }
};

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Gradients smaller than this in magnitude are compared absolutely.
  double abs_floor = 1e-6;
  /// Relu inputs closer than this to zero are not checked.
  double relu_margin = 1e-2;
  /// Per tensor, at most this many coordinates are checked (0 = all).
  std::size_t max_coords = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backprop gradients of `net` against central finite differences
/// of the mean cross-entropy, for every parameter and for every layer's
/// input activation. Parameters inside residual blocks count towards the
/// residual kind; a layer's input gradient counts towards that layer's kind.
/// Batchnorm layers run in training mode with running statistics frozen.
inline GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input, std::span<const int> labels,
                                  const GradCheckOptions& opt = {}) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    if (auto* bn = dynamic_cast<BatchNorm2d<double>*>(&net.layer(i))) bn->freeze_running_stats(true);
    if (auto* rb = dynamic_cast<ResidualBlock<double>*>(&net.layer(i))) {
      for (std::size_t k : {1u, 4u}) static_cast<BatchNorm2d<double>&>(rb->branch_layer(k)).freeze_running_stats(true);
    }
  }

  net.forward(input, true);
  net.backward(labels, true);
  const auto base_pattern = net.pattern();

  std::map<std::string, GradCheckEntry> acc;
  auto record = [&](const std::string& kind, double a, double n, bool skip) {
    auto& e = acc[kind];
    e.kind = kind;
    if (skip) {
      ++e.skipped;
      return;
    }
    ++e.checked;
    e.max_rel_error = std::max(e.max_rel_error, relative_error(a, n, opt.abs_floor));
  };

  auto coords = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_coords && n > opt.max_coords) {
      RngStream r(n);
      r.shuffle(std::span<std::size_t>(idx));
      idx.resize(opt.max_coords);
    }
    return idx;
  };

  // Fourth-order central stencil
  //   f'(x) ~ [8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))] / 12h
  // keeps truncation error well below the tolerance even where batchnorm
  // makes the loss strongly curved. `eval(d)` returns the loss with the
  // coordinate moved by d, and whether a relu/pool decision flipped.
  auto derivative = [&](auto&& eval, bool& kink) {
    double f[4];
    const double offsets[4] = {opt.step, -opt.step, 2 * opt.step, -2 * opt.step};
    kink = false;
    for (int i = 0; i < 4; ++i) {
      bool k = false;
      f[i] = eval(offsets[i], k);
      kink = kink || k;
    }
    return (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * opt.step);
  };

  // Parameters.
  auto params = net.parameters();
  for (auto& np : params) {
    const std::string kind = to_string(net.layer(np.layer).kind());
    Tensor<double>& w = np.param->value;
    const Tensor<double> analytic = np.param->grad;
    for (std::size_t k : coords(w.size())) {
      const double orig = w[k];
      bool kink = false;
      const double numeric = derivative(
          [&](double d, bool& flipped) {
            w[k] = orig + d;
            net.forward(input, true);
            flipped = net.pattern() != base_pattern;
            return net.loss(labels);
          },
          kink);
      w[k] = orig;
      record(kind, analytic[k], numeric, kink);
    }
  }

  // Layer inputs.
  net.forward(input, true);
  for (std::size_t li = 0; li < net.num_layers(); ++li) {
    const LayerKind lk = net.layer(li).kind();
    const std::string kind = to_string(lk);
    const Tensor<double> analytic = net.activation_grad(li);
    const Tensor<double> x = net.activation(li);
    const auto tail_pattern = net.pattern(li);
    for (std::size_t k : coords(x.size())) {
      if (lk == LayerKind::relu && std::abs(x[k]) <= opt.relu_margin) continue;
      bool kink = false;
      const double numeric = derivative(
          [&](double d, bool& flipped) {
            net.activation(li) = x;
            net.activation(li)[k] = x[k] + d;
            net.forward_from(li);
            flipped = net.pattern(li) != tail_pattern;
            return net.loss(labels);
          },
          kink);
      record(kind, analytic[k], numeric, kink);
    }
    net.activation(li) = x;
    net.forward_from(li);
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto& [k, e] : acc) report.entries.push_back(e);
  return report;
}

/// Random small topology for gradient checking: conv, batchnorm, relu,
/// optional maxpool, a residual block (with or without projection), an
/// optional global average pool, fc and softmax, on 8x8 inputs.
inline Topology random_small_topology(std::uint64_t seed) {
  RngStream r(seed);
  using K = LayerKind;
  Topology t;
  const std::size_t in_c = 1 + r.uniform_int(2);
  t.input = {in_c, 8, 8};
  const std::size_t c1 = 2 + r.uniform_int(3);
  const std::size_t c2 = 2 + r.uniform_int(3);
  t.layers.push_back({K::conv, c1, 3, 1, 1, 0});
  t.layers.push_back({K::batchnorm});
  t.layers.push_back({K::relu});
  t.layers.push_back({K::conv, c2, 3, 1, 0, 0});  // 8 -> 6
  t.layers.push_back({K::relu});
  if (r.coin()) t.layers.push_back({K::maxpool, 0, 0, 2, 0, 2});
  const bool project = r.coin();
  t.layers.push_back({K::residual_block, project ? c2 + 1 : c2, 0, project && r.coin() ? 2u : 1u});
  if (r.coin()) t.layers.push_back({K::global_avgpool});
  t.layers.push_back({K::fully_connected, 2 + r.uniform_int(3)});
  t.layers.push_back({K::softmax});
  return t;
}

/// Builds the topology in 64-bit, randomizes parameters (including
/// batchnorm affine terms) and data, and runs grad_check.
inline GradCheckReport grad_check_topology(const Topology& topo, std::size_t batch, std::uint64_t seed,
                                           const GradCheckOptions& opt = {}) {
  Network<double> net(topo);
  net.init(seed);
  RngStream r = RngStream(seed).split(99);
  for (auto& p : net.parameters()) {
    if (!p.param->decay) {
      for (auto& v : p.param->value.span()) v += r.normal(0.0, 0.3);
    }
  }
  const FeatureShape in = topo.input;
  Tensor<double> x({batch, in.c, in.h, in.w});
  for (auto& v : x.span()) v = r.normal();
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(r.uniform_int(net.num_classes()));
  return grad_check(net, x, labels, opt);
}

}  // namespace fontcnn::nn
