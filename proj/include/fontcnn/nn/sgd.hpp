#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/nn/network.hpp"

namespace fontcnn::nn {

/// Piecewise-constant learning rate: the rate of the last breakpoint whose
/// iteration is <= the query.
struct LrSchedule {
  std::vector<std::pair<std::int64_t, double>> points{{0, 0.01}};

  double at(std::int64_t iteration) const {
    double lr = points.empty() ? 0.0 : points.front().second;
    for (const auto& [it, v] : points) {
      if (it <= iteration) lr = v;
    }
    return lr;
  }

  /// "iter:lr,iter:lr,..." e.g. "0:0.01,1500:0.001".
  static LrSchedule parse(const std::string& s) {
    LrSchedule out;
    out.points.clear();
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw DataError("lr schedule entry '" + item + "' is not iter:lr");
      try {
        out.points.emplace_back(std::stoll(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
      } catch (const std::logic_error&) {
        throw DataError("lr schedule entry '" + item + "' is not numeric");
      }
    }
    if (out.points.empty()) throw DataError("empty lr schedule");
    for (std::size_t i = 1; i < out.points.size(); ++i) {
      if (out.points[i].first <= out.points[i - 1].first) throw DataError("lr schedule iterations must increase");
    }
    for (const auto& p : out.points)
      if (p.second < 0) throw DataError("learning rate must be >= 0");
    return out;
  }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < points.size(); ++i) os << (i ? "," : "") << points[i].first << ":" << points[i].second;
    return os.str();
  }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

struct TrainConfig {
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 32;
  std::int64_t max_iterations = 1000;
  std::int64_t val_interval = 100;
  std::uint64_t seed = 1;
  /// Stop once validation accuracy reaches this value (<= 0 disables).
  double target_val_accuracy = 0.0;

  void validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw DataError("weight_decay must be >= 0");
    if (batch_size <= 0) throw DataError("batch_size must be positive");
    if (max_iterations <= 0) throw DataError("max_iterations must be positive");
    if (val_interval <= 0) throw DataError("val_interval must be positive");
  }
};

/// Momentum SGD with L2 decay on weights:
///   v <- momentum * v + grad + decay * w
///   w <- w - lr(iteration) * v
/// Biases and batchnorm parameters are not decayed.
template <typename T>
void sgd_step(std::span<Param<T>* const> params, const TrainConfig& cfg, std::int64_t iteration) {
  const T lr = static_cast<T>(cfg.lr.at(iteration));
  const T mom = static_cast<T>(cfg.momentum);
  for (Param<T>* p : params) {
    const T wd = p->decay ? static_cast<T>(cfg.weight_decay) : T(0);
    T* w = p->value.data();
    T* v = p->momentum.data();
    const T* g = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      v[i] = mom * v[i] + g[i] + wd * w[i];
      w[i] -= lr * v[i];
    }
  }
}

template <typename T>
void sgd_step(Network<T>& net, const TrainConfig& cfg, std::int64_t iteration) {
  std::vector<Param<T>*> ps;
  for (auto& p : net.parameters()) ps.push_back(p.param);
  sgd_step<T>(std::span<Param<T>* const>(ps), cfg, iteration);
}

}  // namespace fontcnn::nn
