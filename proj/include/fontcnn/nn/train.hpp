#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "fontcnn/augment.hpp"
#include "fontcnn/dataset.hpp"
#include "fontcnn/error.hpp"
#include "fontcnn/nn/batch.hpp"
#include "fontcnn/nn/network.hpp"
#include "fontcnn/nn/sgd.hpp"
#include "fontcnn/segment.hpp"

namespace fontcnn::nn {

struct TrainLogRow {
  std::int64_t iteration = 0;
  double train_loss = 0.0;  // mean mini-batch loss since the previous row
  double val_accuracy = 0.0;

  friend bool operator==(const TrainLogRow&, const TrainLogRow&) = default;
};

struct TrainResult {
  Network<float> best;  // snapshot with the highest validation accuracy
  std::vector<TrainLogRow> log;
  std::int64_t best_iteration = 0;
  double best_val_accuracy = -1.0;
  std::int64_t iterations_run = 0;
  std::optional<std::int64_t> target_reached_at;
};

/// Patch accuracy of `net` on a dataset, using center crops.
inline double patch_accuracy(Network<float>& net, const PatchDataset& ds, int input_size = kInputSize) {
  if (ds.patches.empty()) throw DataError("patch_accuracy: empty dataset");
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 64;
  std::vector<GrayImage> crops;
  for (std::size_t start = 0; start < ds.patches.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, ds.patches.size() - start);
    crops.clear();
    for (std::size_t i = 0; i < n; ++i) crops.push_back(center_crop(ds.patches[start + i].image, input_size));
    const auto probs = predict_probabilities(net, crops);
    for (std::size_t i = 0; i < n; ++i) correct += argmax(probs[i]) == ds.patches[start + i].label;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.patches.size());
}

/// Optional per-row hook (e.g. progress printing).
using TrainObserver = std::function<void(const TrainLogRow&)>;

/// Mini-batch SGD over augmented crops of the training patches. Patch order
/// is reshuffled every epoch; every `val_interval` iterations the model is
/// scored on `val` and the best snapshot (earliest on ties) is kept.
inline TrainResult train(Network<float> model, const PatchDataset& train_set, const PatchDataset& val_set,
                         const AugmentConfig& aug, const TrainConfig& cfg, const TrainObserver& observer = {}) {
  cfg.validate();
  aug.validate();
  if (train_set.patches.empty()) throw DataError("train: empty training set");
  if (val_set.patches.empty()) throw DataError("train: empty validation set");
  if (train_set.classes != val_set.classes) throw DataError("train: training and validation class sets differ");
  if (model.num_classes() != train_set.classes.size()) {
    throw DataError("train: model has " + std::to_string(model.num_classes()) + " outputs but dataset has " +
                    std::to_string(train_set.classes.size()) + " classes");
  }

  // Masks come from the original patches and are reused every epoch.
  std::vector<ForegroundMask> masks;
  if (aug.mode == JitterMode::fg_bg) {
    masks.reserve(train_set.patches.size());
    for (const auto& p : train_set.patches) masks.push_back(foreground_mask(p.image));
  }

  const RngStream shuffle_root = RngStream(cfg.seed).split(1);
  const RngStream aug_root(aug.seed);
  std::vector<std::size_t> order(train_set.patches.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  std::uint64_t sample_counter = 0;

  TrainResult result;
  result.best = model;
  double loss_acc = 0.0;
  std::int64_t loss_count = 0;
  std::vector<GrayImage> crops(static_cast<std::size_t>(cfg.batch_size));
  std::vector<int> labels(static_cast<std::size_t>(cfg.batch_size));
  const ForegroundMask no_mask;

  for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        RngStream r = shuffle_root.split(epoch++);
        r.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      RngStream r = aug_root.split(sample_counter++);
      const auto& patch = train_set.patches[idx];
      crops[static_cast<std::size_t>(b)] = augment_patch(patch.image, masks.empty() ? no_mask : masks[idx], r, aug);
      labels[static_cast<std::size_t>(b)] = patch.label;
    }
    model.forward(make_input_batch<float>(crops), true);
    const double loss = model.backward(labels);
    if (!std::isfinite(loss)) throw NumericalError("non-finite training loss at iteration " + std::to_string(it));
    sgd_step(model, cfg, it);
    loss_acc += loss;
    ++loss_count;
    result.iterations_run = it;

    if (it % cfg.val_interval == 0 || it == cfg.max_iterations) {
      const double acc = patch_accuracy(model, val_set, aug.crop_size);
      const TrainLogRow row{it, loss_acc / static_cast<double>(loss_count), acc};
      result.log.push_back(row);
      loss_acc = 0.0;
      loss_count = 0;
      if (observer) observer(row);
      if (acc > result.best_val_accuracy) {
        result.best_val_accuracy = acc;
        result.best_iteration = it;
        result.best = model;
      }
      if (cfg.target_val_accuracy > 0.0 && acc >= cfg.target_val_accuracy) {
        result.target_reached_at = it;
        break;
      }
    }
  }
  return result;
}

/// Tab-separated: iteration, train-loss, val-accuracy.
inline std::string format_train_log(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& r : log) os << r.iteration << '\t' << r.train_loss << '\t' << r.val_accuracy << '\n';
  return os.str();
}

inline void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_train_log(log);
}

}  // namespace fontcnn::nn
