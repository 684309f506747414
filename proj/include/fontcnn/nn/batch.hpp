#pragma once

#include <span>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/nn/network.hpp"
#include "fontcnn/raster.hpp"

namespace fontcnn::nn {

/// Stacks grayscale images into a (N, 1, H, W) batch scaled to [0, 1].
template <typename T = float>
Tensor<T> make_input_batch(std::span<const GrayImage> images) {
  if (images.empty()) throw DataError("empty image batch");
  const auto w = static_cast<std::size_t>(images[0].width());
  const auto h = static_cast<std::size_t>(images[0].height());
  Tensor<T> x({images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (static_cast<std::size_t>(images[n].width()) != w || static_cast<std::size_t>(images[n].height()) != h) {
      throw DataError("images in a batch must share one size");
    }
    T* dst = x.sample(n);
    const auto px = images[n].pixels();
    for (std::size_t i = 0; i < px.size(); ++i) dst[i] = static_cast<T>(px[i]) / T(255);
  }
  return x;
}

/// Class probabilities for each image, evaluated in inference mode in
/// chunks of `batch`.
inline std::vector<std::vector<double>> predict_probabilities(Network<float>& net, std::span<const GrayImage> images,
                                                              std::size_t batch = 32) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  const std::size_t c = net.num_classes();
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t n = std::min(batch, images.size() - start);
    const auto& probs = net.forward(make_input_batch<float>(images.subspan(start, n)), false);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(probs.data() + i * c, probs.data() + (i + 1) * c);
  }
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace fontcnn::nn
