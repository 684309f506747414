#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/augment.hpp"
#include "fontcnn/dataset.hpp"
#include "fontcnn/error.hpp"
#include "fontcnn/nn/batch.hpp"
#include "fontcnn/nn/checkpoint.hpp"
#include "fontcnn/raster.hpp"

namespace fontcnn {

inline constexpr int kTestStride = 100;

/// Raised when an image yields no patches to classify; callers pick a fallback.
class NoContentError : public DataError {
 public:
  using DataError::DataError;
};

struct ImagePrediction {
  std::vector<double> distribution;  // mean patch distribution, not renormalized
  int argmax = 0;                    // over allowed classes, ties to the lowest index
  std::size_t patch_count = 0;
};

/// Argmax over classes not in `disallowed`; ties resolve to the lowest index.
inline int argmax_allowed(std::span<const double> d, const std::set<int>& disallowed = {}) {
  int best = -1;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (disallowed.count(static_cast<int>(i))) continue;
    if (best < 0 || d[i] > d[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  if (best < 0) throw DataError("every class is disallowed");
  return best;
}

/// Top-left positions of dense test windows on an image already padded to
/// at least one window.
inline std::vector<std::pair<int, int>> test_patch_positions(const GrayImage& img, int stride = kTestStride) {
  return grid_positions(img.width(), img.height(), kInputSize, stride);
}

/// Dense 227x227 windows at `stride`, row-major. The image is white-padded
/// to one window if smaller. With `drop_background` (line-format inputs),
/// windows whose darkest pixel exceeds the background threshold are dropped.
inline std::vector<GrayImage> extract_test_patches(const GrayImage& img, int stride = kTestStride,
                                                   bool drop_background = false) {
  const GrayImage src = pad_to_min(img, kInputSize, kInputSize, 255);
  std::vector<GrayImage> out;
  for (auto [x, y] : test_patch_positions(src, stride)) {
    GrayImage p = crop(src, x, y, kInputSize, kInputSize);
    if (drop_background && is_background_patch(p)) continue;
    out.push_back(std::move(p));
  }
  return out;
}

/// Anything mapping 227x227 patches to class distributions.
class PatchClassifier {
 public:
  virtual ~PatchClassifier() = default;
  virtual const std::vector<std::string>& classes() const = 0;
  virtual std::vector<std::vector<double>> classify(std::span<const GrayImage> patches) = 0;
};

/// Network-backed classifier (inference mode).
class ModelClassifier : public PatchClassifier {
 public:
  explicit ModelClassifier(nn::Model model) : model_(std::move(model)) {}
  const std::vector<std::string>& classes() const override { return model_.classes; }
  std::vector<std::vector<double>> classify(std::span<const GrayImage> patches) override {
    return nn::predict_probabilities(model_.net, patches);
  }
  nn::Model& model() { return model_; }

 private:
  nn::Model model_;
};

/// Per-patch function, e.g. for tests and stubs.
class FunctionClassifier : public PatchClassifier {
 public:
  using Fn = std::function<std::vector<double>(const GrayImage&)>;
  FunctionClassifier(std::vector<std::string> classes, Fn fn) : classes_(std::move(classes)), fn_(std::move(fn)) {}
  const std::vector<std::string>& classes() const override { return classes_; }
  std::vector<std::vector<double>> classify(std::span<const GrayImage> patches) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : patches) out.push_back(fn_(p));
    return out;
  }

 private:
  std::vector<std::string> classes_;
  Fn fn_;
};

/// Uniform mean of several classifiers' distributions, members in order.
class EnsembleClassifier : public PatchClassifier {
 public:
  explicit EnsembleClassifier(std::vector<PatchClassifier*> members) : members_(std::move(members)) {
    if (members_.empty()) throw DataError("ensemble: no members");
    for (auto* m : members_)
      if (m->classes() != members_[0]->classes()) throw DataError("ensemble: members have different class sets");
  }
  const std::vector<std::string>& classes() const override { return members_[0]->classes(); }
  std::vector<std::vector<double>> classify(std::span<const GrayImage> patches) override {
    auto out = members_[0]->classify(patches);
    for (std::size_t k = 1; k < members_.size(); ++k) {
      const auto d = members_[k]->classify(patches);
      for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t c = 0; c < out[i].size(); ++c) out[i][c] += d[i][c];
    }
    const double n = static_cast<double>(members_.size());
    for (auto& row : out)
      for (auto& v : row) v /= n;
    return out;
  }

 private:
  std::vector<PatchClassifier*> members_;
};

/// Uniform mean of distributions. They are summed in sorted order, so the
/// result is bit-identical under any permutation of the input.
inline ImagePrediction average_distributions(std::vector<std::vector<double>> dists,
                                             const std::set<int>& disallowed = {}) {
  if (dists.empty()) throw NoContentError("no-content: no distributions to average");
  std::sort(dists.begin(), dists.end());
  ImagePrediction out;
  out.distribution.assign(dists[0].size(), 0.0);
  for (const auto& d : dists) {
    if (d.size() != out.distribution.size()) throw DataError("distributions have different class counts");
    for (std::size_t c = 0; c < d.size(); ++c) out.distribution[c] += d[c];
  }
  for (auto& v : out.distribution) v /= static_cast<double>(dists.size());
  out.argmax = argmax_allowed(out.distribution, disallowed);
  out.patch_count = dists.size();
  return out;
}

struct PredictOptions {
  double scale = 1.0;
  int stride = kTestStride;
  bool line_format = false;  // drop background windows
  std::set<int> disallowed;
};

inline std::vector<GrayImage> prepare_test_patches(const GrayImage& img, const PredictOptions& opt) {
  const GrayImage scaled = opt.scale == 1.0 ? img : resize_scale(img, opt.scale);
  return extract_test_patches(scaled, opt.stride, opt.line_format);
}

/// Mean of the patch distributions of one image.
inline ImagePrediction predict_image(PatchClassifier& clf, const GrayImage& img, const PredictOptions& opt = {}) {
  const auto patches = prepare_test_patches(img, opt);
  if (patches.empty()) throw NoContentError("no-content: every test patch was background");
  return average_distributions(clf.classify(patches), opt.disallowed);
}

/// Page prediction as the uniform mean of its line predictions.
inline ImagePrediction aggregate_lines_to_page(const std::vector<ImagePrediction>& lines,
                                               const std::set<int>& disallowed = {}) {
  if (lines.empty()) throw DataError("aggregate_lines_to_page: no lines");
  std::vector<std::vector<double>> dists;
  std::size_t patches = 0;
  for (const auto& l : lines) {
    dists.push_back(l.distribution);
    patches += l.patch_count;
  }
  ImagePrediction out = average_distributions(dists, disallowed);
  out.patch_count = patches;
  return out;
}

inline void check_same_classes(std::span<PatchClassifier* const> models) {
  if (models.empty()) throw DataError("ensemble: no models");
  for (auto* m : models) {
    if (m->classes() != models[0]->classes()) throw DataError("ensemble: models have different class sets");
  }
}

/// Uniform mean of each model's image-level distribution.
inline ImagePrediction ensemble_predict(std::span<PatchClassifier* const> models, const GrayImage& img,
                                        const PredictOptions& opt = {}) {
  check_same_classes(models);
  const auto patches = prepare_test_patches(img, opt);
  if (patches.empty()) throw NoContentError("no-content: every test patch was background");
  std::vector<std::vector<double>> per_model;
  for (auto* m : models) per_model.push_back(average_distributions(m->classify(patches)).distribution);
  ImagePrediction out = average_distributions(per_model, opt.disallowed);
  out.patch_count = patches.size();
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class EvalLevel { patch, image };

struct EvalItem {
  GrayImage image;
  int label = 0;
  std::string path;
};

struct EvalRow {
  std::string path;
  int truth = 0;
  int predicted = 0;
  double max_probability = 0.0;
};

struct EvalResult {
  std::vector<std::string> classes;
  std::vector<EvalRow> rows;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double accuracy = 0.0;

  /// Per true class; NaN for classes absent from the data.
  std::vector<double> per_class_accuracy() const {
    std::vector<double> out;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
      std::size_t total = 0;
      for (auto v : confusion[c]) total += v;
      out.push_back(total ? static_cast<double>(confusion[c][c]) / static_cast<double>(total)
                          : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
  }
};

inline EvalResult tally(const std::vector<std::string>& classes, std::vector<EvalRow> rows) {
  if (rows.empty()) throw DataError("evaluate: empty dataset");
  EvalResult r;
  r.classes = classes;
  r.confusion.assign(classes.size(), std::vector<std::size_t>(classes.size(), 0));
  std::size_t correct = 0;
  for (const auto& row : rows) {
    if (row.truth < 0 || row.truth >= static_cast<int>(classes.size())) {
      throw DataError("evaluate: label " + std::to_string(row.truth) + " outside class set");
    }
    ++r.confusion[static_cast<std::size_t>(row.truth)][static_cast<std::size_t>(row.predicted)];
    correct += row.truth == row.predicted;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  r.rows = std::move(rows);
  return r;
}

/// Accuracy and confusion matrix of a model or an ensemble. At patch level
/// each item is one patch (center-cropped to the input size); at image level
/// each item is classified by dense patch averaging.
inline EvalResult evaluate(std::span<PatchClassifier* const> models, const std::vector<EvalItem>& items,
                           EvalLevel level, const PredictOptions& opt = {}) {
  check_same_classes(models);
  std::vector<EvalRow> rows;
  if (level == EvalLevel::patch) {
    std::vector<GrayImage> crops;
    for (const auto& it : items) crops.push_back(center_crop(pad_to_min(it.image, kInputSize, kInputSize, 255), kInputSize));
    std::vector<std::vector<double>> mean(items.size());
    for (auto* m : models) {
      const auto probs = m->classify(crops);
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (mean[i].empty()) mean[i].assign(probs[i].size(), 0.0);
        for (std::size_t c = 0; c < probs[i].size(); ++c) mean[i][c] += probs[i][c];
      }
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (auto& v : mean[i]) v /= static_cast<double>(models.size());
      const int p = argmax_allowed(mean[i], opt.disallowed);
      rows.push_back({items[i].path, items[i].label, p, mean[i][static_cast<std::size_t>(p)]});
    }
  } else {
    for (const auto& it : items) {
      const auto pred = ensemble_predict(models, it.image, opt);
      rows.push_back({it.path, it.label, pred.argmax, pred.distribution[static_cast<std::size_t>(pred.argmax)]});
    }
  }
  return tally(models[0]->classes(), std::move(rows));
}

inline EvalResult evaluate(PatchClassifier& model, const std::vector<EvalItem>& items, EvalLevel level,
                           const PredictOptions& opt = {}) {
  PatchClassifier* one[] = {&model};
  return evaluate(one, items, level, opt);
}

/// Per-item rows (path, true, predicted, max probability), then a blank
/// line and the confusion matrix with class-name headers.
inline std::string format_eval_report(const EvalResult& r) {
  std::ostringstream os;
  os.precision(9);
  os << "# path\ttrue\tpredicted\tmax_probability\n";
  for (const auto& row : r.rows) {
    os << row.path << '\t' << r.classes[static_cast<std::size_t>(row.truth)] << '\t'
       << r.classes[static_cast<std::size_t>(row.predicted)] << '\t' << row.max_probability << '\n';
  }
  os << "\n# confusion (rows = true class)\n";
  os << "true\\predicted";
  for (const auto& c : r.classes) os << '\t' << c;
  os << '\n';
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << r.classes[i];
    for (auto v : r.confusion[i]) os << '\t' << v;
    os << '\n';
  }
  os << "\n# accuracy\t" << r.accuracy << '\n';
  return os.str();
}

inline void write_eval_report(const EvalResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_eval_report(r);
}

/// Evaluation items from labeled source images.
inline std::vector<EvalItem> to_eval_items(const std::vector<SourceImage>& sources) {
  std::vector<EvalItem> out;
  for (const auto& s : sources) out.push_back({s.image, s.label, s.path});
  return out;
}

inline std::vector<EvalItem> to_eval_items(const PatchDataset& ds) {
  std::vector<EvalItem> out;
  for (const auto& p : ds.patches) {
    out.push_back({p.image, p.label,
                   p.source.path + "@" + std::to_string(p.source.grid_x) + "," + std::to_string(p.source.grid_y)});
  }
  return out;
}

}  // namespace fontcnn
