#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/augment.hpp"
#include "fontcnn/dataset.hpp"
#include "fontcnn/error.hpp"
#include "fontcnn/infer.hpp"
#include "fontcnn/nn/checkpoint.hpp"
#include "fontcnn/nn/grad_check.hpp"
#include "fontcnn/nn/sgd.hpp"
#include "fontcnn/nn/topology.hpp"
#include "fontcnn/nn/train.hpp"
#include "fontcnn/random.hpp"
#include "fontcnn/sensitivity.hpp"
#include "fontcnn/synthgen.hpp"

namespace fontcnn::cli {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct DataSection {
  std::string train_list, val_list, test_list;  // image lists: path<TAB>label
  std::string annotations;                      // region sidecar for relabeling
  std::string relabel = "none";
  std::vector<std::string> classes;  // empty: sorted labels of the training list
  std::vector<double> scales{1.0};
  int stride = kTrainStride;
  bool discard_background = true;
  bool materialize = false;
};

struct ModelSection {
  std::string topology = "mini-residual";  // built-in name or topology file
  int ensemble = 1;
};

struct SynthSection {
  int classes = 27;  // number of default specs when spec_file is unset
  int pages_per_class = 10;
  int val_pages_per_class = 2;
  int test_pages_per_class = 5;
  double fg_noise_sigma = 20.0;
  int line_spacing = 12;
  int margin = 16;
  int ink = 40;
  int page_width = 512;
  int page_height = 512;
  int backgrounds = 8;
  std::string spec_file;
  std::string atlas;
  std::uint64_t spec_seed = 27;
};

struct EvalSection {
  std::vector<std::string> checkpoints;
  std::string level = "image";
  double scale = 1.0;
  int stride = kTestStride;
  bool line_format = false;
  std::vector<std::string> disallowed;
};

struct SweepSection {
  int patches_per_class = 30;
  std::string backgrounds;  // directory of clean background pages
  std::vector<int> spacings = default_spacings();
  int images_per_class = 5;
  int lines_per_image = 0;  // 0: as many as fit at the widest spacing
};

struct GradCheckSection {
  int models = 10;
  int batch = 2;
  double tolerance = 1e-3;
  double step = 1e-3;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DataSection data;
  AugmentConfig augment;
  nn::TrainConfig train;
  ModelSection model;
  std::string pretrain_checkpoint;
  SynthSection synth;
  EvalSection eval;
  SweepSection sweep;
  GradCheckSection gradcheck;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  const char* end = v.data() + v.size();
  auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc() || r.ptr != end) {
    throw ConfigError(key + ": expected " + (std::is_integral_v<T> ? "an integer" : "a number") + ", got '" + v + "'",
                      key);
  }
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'", key);
}

}  // namespace detail

/// One config key: where it lives, how to read and print it.
struct ConfigField {
  std::string section;  // empty for top-level keys
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string full_key() const { return section.empty() ? key : section + "." + key; }
};

namespace detail {

template <typename T, typename Acc>
ConfigField number_field(std::string sec, std::string key, std::string help, Acc acc, double lo, double hi,
                         bool hi_open = false) {
  const std::string full = sec.empty() ? key : sec + "." + key;
  return {sec, key, std::move(help),
          [=](RunConfig& c, const std::string& v) {
            const T x = parse_number<T>(v, full);
            const double d = static_cast<double>(x);
            if (!(d >= lo) || (hi_open ? !(d < hi) : !(d <= hi))) {
              throw ConfigError(full + ": value " + v + " outside [" + format_double(lo) + ", " + format_double(hi) +
                                    (hi_open ? ")" : "]"),
                                full);
            }
            acc(c) = x;
          },
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(acc(c));
            } else {
              return std::to_string(acc(c));
            }
          }};
}

template <typename Acc>
ConfigField string_field(std::string sec, std::string key, std::string help, Acc acc,
                         std::vector<std::string> choices = {}) {
  const std::string full = sec.empty() ? key : sec + "." + key;
  return {sec, key, std::move(help),
          [=](RunConfig& c, const std::string& v) {
            if (!choices.empty() && std::find(choices.begin(), choices.end(), v) == choices.end()) {
              throw ConfigError(full + ": '" + v + "' is not one of " + join(choices), full);
            }
            acc(c) = v;
          },
          [=](const RunConfig& c) { return acc(c); }};
}

template <typename Acc>
ConfigField bool_field(std::string sec, std::string key, std::string help, Acc acc) {
  const std::string full = sec.empty() ? key : sec + "." + key;
  return {sec, key, std::move(help), [=](RunConfig& c, const std::string& v) { acc(c) = parse_bool(v, full); },
          [=](const RunConfig& c) { return std::string(acc(c) ? "true" : "false"); }};
}

template <typename Acc>
ConfigField list_field(std::string sec, std::string key, std::string help, Acc acc) {
  return {sec, key, std::move(help), [=](RunConfig& c, const std::string& v) { acc(c) = split_list(v); },
          [=](const RunConfig& c) { return join(acc(c)); }};
}

}  // namespace detail

/// Every recognised key, in dump order.
inline const std::vector<ConfigField>& config_fields() {
  using namespace detail;
  static const std::vector<ConfigField> fields = [] {
    constexpr double kMaxInt = 1e9;
    std::vector<ConfigField> f;
    f.push_back(number_field<std::uint64_t>("", "seed", "master seed for every random stream",
                                            [](auto& c) -> auto& { return c.seed; }, 0, 1.8e19));

    // data
    f.push_back(string_field("data", "train_list", "training image list", [](auto& c) -> auto& { return c.data.train_list; }));
    f.push_back(string_field("data", "val_list", "validation image list", [](auto& c) -> auto& { return c.data.val_list; }));
    f.push_back(string_field("data", "test_list", "test image list", [](auto& c) -> auto& { return c.data.test_list; }));
    f.push_back(string_field("data", "annotations", "region annotations for relabeling",
                             [](auto& c) -> auto& { return c.data.annotations; }));
    f.push_back(string_field("data", "relabel", "none, filtered, extended or noise",
                             [](auto& c) -> auto& { return c.data.relabel; }, {"none", "filtered", "extended", "noise"}));
    f.push_back(list_field("data", "classes", "class names (default: labels of the training list)",
                           [](auto& c) -> auto& { return c.data.classes; }));
    f.push_back({"data", "scales", "image scales in (0,1]",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> s;
                   for (const auto& item : split_list(v)) {
                     const double x = parse_number<double>(item, "data.scales");
                     if (!(x > 0.0 && x <= 1.0)) throw ConfigError("data.scales: " + item + " outside (0, 1]", "data.scales");
                     s.push_back(x);
                   }
                   if (s.empty()) throw ConfigError("data.scales: empty list", "data.scales");
                   c.data.scales = s;
                 },
                 [](const RunConfig& c) {
                   std::vector<std::string> s;
                   for (double x : c.data.scales) s.push_back(format_double(x));
                   return join(s);
                 }});
    f.push_back(number_field<int>("data", "stride", "training patch stride", [](auto& c) -> auto& { return c.data.stride; },
                                  1, kMaxInt));
    f.push_back(bool_field("data", "discard_background", "drop background patches",
                           [](auto& c) -> auto& { return c.data.discard_background; }));
    f.push_back(bool_field("data", "materialize", "also write patch images (build-dataset)",
                           [](auto& c) -> auto& { return c.data.materialize; }));

    // augment
    f.push_back(number_field<int>("augment", "crop_size", "network input size",
                                  [](auto& c) -> auto& { return c.augment.crop_size; }, 1, kTrainPatchSize));
    f.push_back(number_field<double>("augment", "jitter_mu", "mean intensity shift",
                                     [](auto& c) -> auto& { return c.augment.jitter_mu; }, -255, 255));
    f.push_back(number_field<double>("augment", "jitter_sigma", "intensity shift standard deviation",
                                     [](auto& c) -> auto& { return c.augment.jitter_sigma; }, 0, 255));
    f.push_back({"augment", "mode", "none, whole or fg_bg",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "none" && v != "whole" && v != "fg_bg") {
                     throw ConfigError("augment.mode: '" + v + "' is not one of none,whole,fg_bg", "augment.mode");
                   }
                   c.augment.mode = parse_jitter_mode(v);
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.augment.mode)); }});

    // train
    f.push_back(string_field("train", "topology", "mini-plain, mini-residual or a topology file",
                             [](auto& c) -> auto& { return c.model.topology; }));
    f.push_back({"train", "lr", "learning rate schedule iter:lr,...",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.train.lr = nn::LrSchedule::parse(v);
                   } catch (const DataError& e) {
                     throw ConfigError(std::string("train.lr: ") + e.what(), "train.lr");
                   }
                   if (c.train.lr.points.front().first != 0) throw ConfigError("train.lr: schedule must start at 0", "train.lr");
                 },
                 [](const RunConfig& c) { return c.train.lr.to_string(); }});
    f.push_back(number_field<double>("train", "momentum", "SGD momentum",
                                     [](auto& c) -> auto& { return c.train.momentum; }, 0, 1, true));
    f.push_back(number_field<double>("train", "weight_decay", "L2 weight decay",
                                     [](auto& c) -> auto& { return c.train.weight_decay; }, 0, 1));
    f.push_back(number_field<int>("train", "batch_size", "mini-batch size",
                                  [](auto& c) -> auto& { return c.train.batch_size; }, 1, kMaxInt));
    f.push_back(number_field<std::int64_t>("train", "max_iterations", "iteration budget",
                                           [](auto& c) -> auto& { return c.train.max_iterations; }, 1, 1e15));
    f.push_back(number_field<std::int64_t>("train", "val_interval", "iterations between validations",
                                           [](auto& c) -> auto& { return c.train.val_interval; }, 1, 1e15));
    f.push_back(number_field<double>("train", "target_val_accuracy", "stop early at this validation accuracy (0: off)",
                                     [](auto& c) -> auto& { return c.train.target_val_accuracy; }, 0, 1));
    f.push_back(number_field<int>("train", "ensemble", "independently seeded models to train",
                                  [](auto& c) -> auto& { return c.model.ensemble; }, 1, 1000));

    // pretrain
    f.push_back(string_field("pretrain", "checkpoint", "checkpoint to finetune from",
                             [](auto& c) -> auto& { return c.pretrain_checkpoint; }));

    // synth
    f.push_back(number_field<int>("synth", "classes", "default class count when spec_file is unset",
                                  [](auto& c) -> auto& { return c.synth.classes; }, 2, 10000));
    f.push_back(number_field<int>("synth", "pages_per_class", "training pages per class",
                                  [](auto& c) -> auto& { return c.synth.pages_per_class; }, 0, kMaxInt));
    f.push_back(number_field<int>("synth", "val_pages_per_class", "validation pages per class",
                                  [](auto& c) -> auto& { return c.synth.val_pages_per_class; }, 0, kMaxInt));
    f.push_back(number_field<int>("synth", "test_pages_per_class", "test pages per class",
                                  [](auto& c) -> auto& { return c.synth.test_pages_per_class; }, 0, kMaxInt));
    f.push_back(number_field<double>("synth", "fg_noise_sigma", "foreground noise standard deviation",
                                     [](auto& c) -> auto& { return c.synth.fg_noise_sigma; }, 0, 255));
    f.push_back(number_field<int>("synth", "line_spacing", "empty rows between lines",
                                  [](auto& c) -> auto& { return c.synth.line_spacing; }, 0, kMaxInt));
    f.push_back(number_field<int>("synth", "margin", "page margin in pixels",
                                  [](auto& c) -> auto& { return c.synth.margin; }, 0, kMaxInt));
    f.push_back(number_field<int>("synth", "ink", "ink intensity", [](auto& c) -> auto& { return c.synth.ink; }, 0, 255));
    f.push_back(number_field<int>("synth", "page_width", "generated page width",
                                  [](auto& c) -> auto& { return c.synth.page_width; }, 1, 100000));
    f.push_back(number_field<int>("synth", "page_height", "generated page height",
                                  [](auto& c) -> auto& { return c.synth.page_height; }, 1, 100000));
    f.push_back(number_field<int>("synth", "backgrounds", "procedural background pages",
                                  [](auto& c) -> auto& { return c.synth.backgrounds; }, 1, 100000));
    f.push_back(string_field("synth", "spec_file", "class spec file (default: generated specs)",
                             [](auto& c) -> auto& { return c.synth.spec_file; }));
    f.push_back(string_field("synth", "atlas", "glyph atlas directory (default: bundled)",
                             [](auto& c) -> auto& { return c.synth.atlas; }));
    f.push_back(number_field<std::uint64_t>("synth", "spec_seed", "seed of the generated class specs",
                                            [](auto& c) -> auto& { return c.synth.spec_seed; }, 0, 1.8e19));

    // eval
    f.push_back(list_field("eval", "checkpoints", "model checkpoints (several form an ensemble)",
                           [](auto& c) -> auto& { return c.eval.checkpoints; }));
    f.push_back(string_field("eval", "level", "image or patch", [](auto& c) -> auto& { return c.eval.level; },
                             {"image", "patch"}));
    f.push_back(number_field<double>("eval", "scale", "test image scale", [](auto& c) -> auto& { return c.eval.scale; },
                                     1e-9, 1));
    f.push_back(number_field<int>("eval", "stride", "test patch stride", [](auto& c) -> auto& { return c.eval.stride; }, 1,
                                  kMaxInt));
    f.push_back(bool_field("eval", "line_format", "test images are text lines (drop background windows)",
                           [](auto& c) -> auto& { return c.eval.line_format; }));
    f.push_back(list_field("eval", "disallowed", "classes excluded from prediction",
                           [](auto& c) -> auto& { return c.eval.disallowed; }));

    // sweep
    f.push_back(number_field<int>("sweep", "patches_per_class", "darkness sweep patches per class",
                                  [](auto& c) -> auto& { return c.sweep.patches_per_class; }, 1, kMaxInt));
    f.push_back(string_field("sweep", "backgrounds", "directory of clean background pages",
                             [](auto& c) -> auto& { return c.sweep.backgrounds; }));
    f.push_back({"sweep", "spacings", "line spacings in pixels",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<int> s;
                   for (const auto& item : split_list(v)) {
                     const int x = parse_number<int>(item, "sweep.spacings");
                     if (x < 0) throw ConfigError("sweep.spacings: " + item + " is negative", "sweep.spacings");
                     s.push_back(x);
                   }
                   if (s.empty()) throw ConfigError("sweep.spacings: empty list", "sweep.spacings");
                   c.sweep.spacings = s;
                 },
                 [](const RunConfig& c) {
                   std::vector<std::string> s;
                   for (int x : c.sweep.spacings) s.push_back(std::to_string(x));
                   return join(s);
                 }});
    f.push_back(number_field<int>("sweep", "images_per_class", "spacing sweep images per class",
                                  [](auto& c) -> auto& { return c.sweep.images_per_class; }, 1, kMaxInt));
    f.push_back(number_field<int>("sweep", "lines_per_image", "lines per spacing sweep image (0: fill)",
                                  [](auto& c) -> auto& { return c.sweep.lines_per_image; }, 0, kMaxInt));

    // gradcheck
    f.push_back(number_field<int>("gradcheck", "models", "random models to check",
                                  [](auto& c) -> auto& { return c.gradcheck.models; }, 1, kMaxInt));
    f.push_back(number_field<int>("gradcheck", "batch", "batch size", [](auto& c) -> auto& { return c.gradcheck.batch; },
                                  1, 1024));
    f.push_back(number_field<double>("gradcheck", "tolerance", "maximum relative error",
                                     [](auto& c) -> auto& { return c.gradcheck.tolerance; }, 0, 1));
    f.push_back(number_field<double>("gradcheck", "step", "finite difference step",
                                     [](auto& c) -> auto& { return c.gradcheck.step; }, 1e-12, 1));
    return f;
  }();
  return fields;
}

inline const std::set<std::string>& config_sections() {
  static const std::set<std::string> s = [] {
    std::set<std::string> out;
    for (const auto& f : config_fields()) out.insert(f.section);
    return out;
  }();
  return s;
}

/// Keys relative to a config file are resolved against its directory.
inline bool is_path_key(const std::string& full) {
  static const std::set<std::string> keys = {"data.train_list", "data.val_list",   "data.test_list",
                                             "data.annotations", "synth.spec_file", "synth.atlas",
                                             "pretrain.checkpoint", "eval.checkpoints", "sweep.backgrounds",
                                             "train.topology"};
  return keys.count(full) > 0;
}

/// Parses `key = value` lines with `[section]` headers. Blank lines and
/// lines starting with '#' are ignored. Relative paths are resolved against
/// `base` when it is non-empty.
inline RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base = {}) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::set<std::string> seen;
  int lineno = 0;
  auto fail = [&](const std::string& msg, const std::string& key = {}) {
    throw ConfigError("config line " + std::to_string(lineno) + ": " + msg, key);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t[0] == '[') {
      if (t.back() != ']') fail("unterminated section header");
      section = detail::trim(t.substr(1, t.size() - 2));
      if (section.empty() || !config_sections().count(section)) fail("unknown section [" + section + "]", section);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) fail("missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    auto it = std::find_if(config_fields().begin(), config_fields().end(),
                           [&](const ConfigField& f) { return f.section == section && f.key == key; });
    if (it == config_fields().end()) fail("unknown key '" + full + "'", full);
    if (!seen.insert(full).second) fail("duplicate key '" + full + "'", full);
    if (!base.empty() && is_path_key(full) && !value.empty()) {
      auto resolve = [&](const std::string& p) {
        if (full == "train.topology" && (p == "mini-plain" || p == "mini-residual")) return p;
        std::filesystem::path q(p);
        return (q.is_relative() ? base / q : q).lexically_normal().string();
      };
      if (full == "eval.checkpoints") {
        std::vector<std::string> parts;
        for (const auto& p : detail::split_list(value)) parts.push_back(resolve(p));
        value = detail::join(parts);
      } else {
        value = resolve(value);
      }
    }
    try {
      it->set(c, value);
    } catch (const ConfigError& e) {
      fail(e.what(), e.key());
    }
  }
  return c;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string(), "config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

/// Canonical text form listing every key.
inline std::string dump_config(const RunConfig& c) {
  std::ostringstream os;
  std::string section = "\x01";
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      section = f.section;
      if (!section.empty()) os << "\n[" << section << "]\n";
    }
    os << f.key << " = " << f.get(c) << "\n";
  }
  return os.str();
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return dump_config(a) == dump_config(b); }

/// Every key with its default, for --help.
inline std::string config_help() {
  const RunConfig defaults;
  std::ostringstream os;
  std::string section = "\x01";
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      section = f.section;
      os << (section.empty() ? "(top level)" : "[" + section + "]") << "\n";
    }
    std::string def = f.get(defaults);
    if (def.empty()) def = "\"\"";
    os << "  " << std::left << std::setw(22) << f.key << std::setw(26) << def << f.help << "\n";
  }
  return os.str();
}

/// FNV-1a of the command name and canonical config, as 16 hex digits.
inline std::string config_hash(const std::string& command, const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : command + "\n" + dump_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"build-dataset", "synthgen",       "train",         "pretrain-finetune",
                                                 "eval",          "darkness-sweep", "spacing-sweep", "grad-check"};
  return names;
}

/// Command-independent checks plus the inputs `command` needs.
inline void validate_config(const RunConfig& c, const std::string& command) {
  auto need = [&](const std::string& value, const std::string& key) {
    if (value.empty()) throw ConfigError(key + " is required by " + command, key);
  };
  auto exists = [&](const std::string& value, const std::string& key) {
    if (!value.empty() && !std::filesystem::exists(value)) {
      throw ConfigError(key + ": path '" + value + "' does not exist", key);
    }
  };
  exists(c.data.train_list, "data.train_list");
  exists(c.data.val_list, "data.val_list");
  exists(c.data.test_list, "data.test_list");
  exists(c.data.annotations, "data.annotations");
  exists(c.pretrain_checkpoint, "pretrain.checkpoint");
  exists(c.synth.spec_file, "synth.spec_file");
  exists(c.synth.atlas, "synth.atlas");
  exists(c.sweep.backgrounds, "sweep.backgrounds");
  for (const auto& p : c.eval.checkpoints) exists(p, "eval.checkpoints");
  if (c.model.topology != "mini-plain" && c.model.topology != "mini-residual") exists(c.model.topology, "train.topology");
  if (c.data.relabel != "none") need(c.data.annotations, "data.annotations");
  if (c.augment.crop_size > kTrainPatchSize) throw ConfigError("augment.crop_size exceeds the patch size", "augment.crop_size");

  if (std::find(command_names().begin(), command_names().end(), command) == command_names().end()) {
    throw ConfigError("unknown command '" + command + "'", "command");
  }
  if (command == "build-dataset") need(c.data.train_list, "data.train_list");
  if (command == "train" || command == "pretrain-finetune") {
    need(c.data.train_list, "data.train_list");
    need(c.data.val_list, "data.val_list");
  }
  if (command == "pretrain-finetune") need(c.pretrain_checkpoint, "pretrain.checkpoint");
  if (command == "eval" || command == "darkness-sweep") need(c.data.test_list, "data.test_list");
  if (command == "eval" || command == "darkness-sweep" || command == "spacing-sweep") {
    if (c.eval.checkpoints.empty()) throw ConfigError("eval.checkpoints is required by " + command, "eval.checkpoints");
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Derived seed for a named purpose so streams never collide.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  return RngStream(seed).split(purpose).split(index).next_u64();
}

enum SeedPurpose : std::uint64_t { kInitSeed = 1, kShuffleSeed, kAugmentSeed, kSynthSeed, kBackgroundSeed, kSampleSeed,
                                   kSpacingSeed, kGradCheckSeed };

inline std::filesystem::path run_directory(const std::filesystem::path& out_dir, const std::string& command,
                                           const RunConfig& c) {
  return out_dir / (command + "-" + config_hash(command, c));
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

inline std::vector<std::string> resolve_classes(const RunConfig& c, const std::vector<ImageListEntry>& entries) {
  if (!c.data.classes.empty()) {
    std::set<std::string> uniq(c.data.classes.begin(), c.data.classes.end());
    if (uniq.size() != c.data.classes.size()) throw ConfigError("data.classes contains duplicates", "data.classes");
    return c.data.classes;
  }
  std::set<std::string> labels;
  for (const auto& e : entries) labels.insert(e.label);
  return {labels.begin(), labels.end()};
}

/// Patches of every source at every configured scale, scale-major.
inline PatchDataset build_multiscale(const std::vector<SourceImage>& src, const std::vector<std::string>& classes,
                                     const RunConfig& c, Split split) {
  PatchDataset ds;
  ds.classes = classes;
  ds.split = split;
  for (double s : c.data.scales) {
    auto part = build_dataset(src, classes, s, c.data.stride, c.data.discard_background, split);
    for (auto& p : part.patches) ds.patches.push_back(std::move(p));
  }
  if (c.data.relabel != "none") {
    ds = relabel_dataset(ds, read_annotations(c.data.annotations), parse_relabel_mode(c.data.relabel));
  }
  return ds;
}

inline PatchDataset load_split(const RunConfig& c, const std::string& list, const std::vector<std::string>& classes,
                               Split split) {
  return build_multiscale(load_sources(read_image_list(list), classes), classes, c, split);
}

/// Built-in topology, or a topology file whose classifier is resized to the
/// class count.
inline nn::Topology resolve_topology(const RunConfig& c, std::size_t classes) {
  const auto input = static_cast<std::size_t>(c.augment.crop_size);
  if (c.model.topology == "mini-plain" || c.model.topology == "mini-residual") {
    return nn::builtin_topology(c.model.topology, classes, input);
  }
  std::ifstream in(c.model.topology);
  if (!in) throw ConfigError("train.topology: cannot open '" + c.model.topology + "'", "train.topology");
  std::stringstream ss;
  ss << in.rdbuf();
  nn::Topology t;
  try {
    t = nn::Topology::parse(ss.str());
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("train.topology: ") + e.what(), "train.topology");
  }
  if (t.input.h != input || t.input.w != input || t.input.c != 1) {
    throw ConfigError("train.topology: input must be 1x" + std::to_string(input) + "x" + std::to_string(input) +
                          " to match augment.crop_size",
                      "train.topology");
  }
  auto fc = std::find_if(t.layers.rbegin(), t.layers.rend(),
                         [](const nn::LayerSpec& l) { return l.kind == nn::LayerKind::fully_connected; });
  if (fc == t.layers.rend()) throw ConfigError("train.topology: no fully connected classifier", "train.topology");
  fc->out = classes;
  return t;
}

inline std::vector<std::unique_ptr<ModelClassifier>> load_models(const RunConfig& c) {
  std::vector<std::unique_ptr<ModelClassifier>> out;
  for (const auto& p : c.eval.checkpoints) out.push_back(std::make_unique<ModelClassifier>(nn::load_model(p)));
  return out;
}

inline std::set<int> disallowed_indices(const RunConfig& c, const std::vector<std::string>& classes) {
  std::set<int> out;
  for (const auto& name : c.eval.disallowed) {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw ConfigError("eval.disallowed: unknown class '" + name + "'", "eval.disallowed");
    out.insert(static_cast<int>(it - classes.begin()));
  }
  return out;
}

inline GlyphAtlas load_atlas(const RunConfig& c) {
  return GlyphAtlas::load(c.synth.atlas.empty() ? default_atlas_dir() : std::filesystem::path(c.synth.atlas));
}

inline std::vector<SyntheticClassSpec> load_specs(const RunConfig& c, const GlyphAtlas& atlas) {
  if (!c.synth.spec_file.empty()) return read_class_specs(c.synth.spec_file);
  return default_class_specs(atlas, c.synth.classes, c.synth.spec_seed);
}

inline SynthConfig synth_config(const RunConfig& c, int classes) {
  SynthConfig s;
  s.classes = classes;
  s.pages_per_class = c.synth.pages_per_class;
  s.fg_noise_sigma = c.synth.fg_noise_sigma;
  s.line_spacing = c.synth.line_spacing;
  s.margin = c.synth.margin;
  s.ink = c.synth.ink;
  s.seed = derive_seed(c.seed, kSynthSeed);
  return s;
}

inline std::vector<GrayImage> load_background_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .pgm backgrounds in " + dir.string());
  std::vector<GrayImage> out;
  for (const auto& f : files) out.push_back(load_pgm(f));
  return out;
}

inline std::string class_list_text(const std::vector<std::string>& classes) {
  std::string out;
  for (const auto& c : classes) out += c + "\n";
  return out;
}

struct Context {
  const RunConfig& cfg;
  std::filesystem::path dir;
  std::ostream& out;
};

inline int cmd_grad_check(Context& ctx) {
  const auto& g = ctx.cfg.gradcheck;
  nn::GradCheckOptions opt;
  opt.tolerance = g.tolerance;
  opt.step = g.step;
  nn::GradCheckReport report;
  report.tolerance = g.tolerance;
  for (int i = 0; i < g.models; ++i) {
    const std::uint64_t s = derive_seed(ctx.cfg.seed, kGradCheckSeed, static_cast<std::uint64_t>(i));
    report.merge(nn::grad_check_topology(nn::random_small_topology(s), static_cast<std::size_t>(g.batch), s, opt));
  }
  write_text(ctx.dir / "gradcheck.tsv", report.to_string());
  ctx.out << report.to_string();
  ctx.out << (report.passed() ? "grad-check passed\n" : "grad-check FAILED\n");
  return report.passed() ? 0 : 3;
}

inline int cmd_build_dataset(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto classes = resolve_classes(c, read_image_list(c.data.train_list));
  write_text(ctx.dir / "classes.txt", class_list_text(classes));
  const std::vector<std::pair<std::string, Split>> splits = {
      {c.data.train_list, Split::train}, {c.data.val_list, Split::validation}, {c.data.test_list, Split::test}};
  for (const auto& [list, split] : splits) {
    if (list.empty()) continue;
    const auto ds = load_split(c, list, classes, split);
    const std::string name = to_string(split);
    write_manifest(ds, ctx.dir / ("manifest-" + name + ".tsv"));
    if (c.data.materialize) materialize_patches(ds, ctx.dir / "patches" / name);
    ctx.out << name << "\t" << ds.size() << " patches\n";
  }
  return 0;
}

inline int cmd_synthgen(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto atlas = load_atlas(c);
  const auto specs = load_specs(c, atlas);
  auto sc = synth_config(c, static_cast<int>(specs.size()));
  const auto bgs = parchment_backgrounds(c.synth.backgrounds, c.synth.page_width, c.synth.page_height,
                                         derive_seed(c.seed, kBackgroundSeed));
  std::filesystem::create_directories(ctx.dir / "backgrounds");
  for (std::size_t i = 0; i < bgs.size(); ++i) save_pgm(bgs[i], ctx.dir / "backgrounds" / ("bg-" + std::to_string(i) + ".pgm"));
  write_class_specs(specs, ctx.dir / "specs.tsv");
  write_text(ctx.dir / "classes.txt", class_list_text(class_names(specs)));

  // Splits use disjoint page index ranges of the same per-class streams.
  const std::vector<std::tuple<std::string, int, int>> splits = {
      {"train", 0, c.synth.pages_per_class},
      {"val", 1'000'000, c.synth.val_pages_per_class},
      {"test", 2'000'000, c.synth.test_pages_per_class}};
  for (const auto& [name, first, count] : splits) {
    if (count == 0) continue;
    sc.pages_per_class = count;
    const auto pages = generate_pages(sc, specs, atlas, bgs, first);
    std::vector<ImageListEntry> entries;
    for (std::size_t i = 0; i < pages.size(); ++i) {
      const auto& cls = specs[static_cast<std::size_t>(pages[i].label)].name;
      const auto rel = std::filesystem::path("pages") / cls / (name + "-" + std::to_string(i) + ".pgm");
      std::filesystem::create_directories(ctx.dir / rel.parent_path());
      save_pgm(pages[i].image, ctx.dir / rel);
      entries.push_back({rel.string(), cls});
    }
    write_image_list(entries, ctx.dir / (name + ".tsv"));
    ctx.out << name << "\t" << pages.size() << " pages\n";
  }
  return 0;
}

inline std::string format_transfer(const nn::Checkpoint& pre, nn::Network<float>& net) {
  std::ostringstream os;
  os << "# tensor\tlayer\tcheckpoint_checksum\tloaded_checksum\tstatus\n";
  const std::size_t head = net.classifier_layer();
  auto row = [&](const std::string& name, std::size_t layer, const nn::Tensor<float>& t) {
    const auto* src = pre.find(name);
    os << name << '\t' << layer << '\t' << std::hex << std::setw(16) << std::setfill('0')
       << (src ? nn::tensor_checksum(src->tensor) : 0) << '\t' << std::setw(16) << nn::tensor_checksum(t) << std::dec
       << std::setfill(' ') << '\t' << (layer == head ? "reinitialized" : "copied") << '\n';
  };
  for (auto& p : net.parameters()) row(p.name, p.layer, p.param->value);
  for (auto& b : net.buffers()) row(b.name, b.layer, *b.tensor);
  return os.str();
}

inline int cmd_train(Context& ctx, bool finetune) {
  const auto& c = ctx.cfg;
  const auto classes = resolve_classes(c, read_image_list(c.data.train_list));
  const auto train_ds = load_split(c, c.data.train_list, classes, Split::train);
  const auto val_ds = load_split(c, c.data.val_list, classes, Split::validation);
  const auto topo = resolve_topology(c, train_ds.classes.size());
  std::optional<nn::Checkpoint> pre;
  if (finetune) pre = nn::load_checkpoint(c.pretrain_checkpoint);
  write_text(ctx.dir / "classes.txt", class_list_text(train_ds.classes));
  write_text(ctx.dir / "topology.txt", topo.to_text());

  std::ostringstream summary;
  summary << "# member\tbest_iteration\tbest_val_accuracy\titerations_run\n";
  for (int m = 0; m < c.model.ensemble; ++m) {
    const auto mu = static_cast<std::uint64_t>(m);
    const std::uint64_t init_seed = derive_seed(c.seed, kInitSeed, mu);
    nn::Network<float> net = [&] {
      if (pre) return nn::finetune_from(*pre, topo, init_seed);
      nn::Network<float> n(topo);
      n.init(init_seed);
      return n;
    }();
    const std::string suffix = "-" + std::to_string(m);
    if (pre) write_text(ctx.dir / ("transfer" + suffix + ".tsv"), format_transfer(*pre, net));
    auto tc = c.train;
    tc.seed = derive_seed(c.seed, kShuffleSeed, mu);
    auto aug = c.augment;
    aug.seed = derive_seed(c.seed, kAugmentSeed, mu);
    auto r = nn::train(std::move(net), train_ds, val_ds, aug, tc, [&](const nn::TrainLogRow& row) {
      ctx.out << "member " << m << "\titer " << row.iteration << "\tloss " << row.train_loss << "\tval " << row.val_accuracy
              << "\n";
    });
    nn::save_checkpoint(nn::make_checkpoint(r.best, train_ds.classes), ctx.dir / ("model" + suffix + ".ckpt"));
    nn::write_train_log(r.log, ctx.dir / ("train-log" + suffix + ".tsv"));
    summary << m << '\t' << r.best_iteration << '\t' << detail::format_double(r.best_val_accuracy) << '\t'
            << r.iterations_run << '\n';
  }
  write_text(ctx.dir / "summary.tsv", summary.str());
  return 0;
}

inline std::unique_ptr<EnsembleClassifier> ensemble_of(std::vector<std::unique_ptr<ModelClassifier>>& models) {
  std::vector<PatchClassifier*> ptrs;
  for (auto& m : models) ptrs.push_back(m.get());
  return std::make_unique<EnsembleClassifier>(std::move(ptrs));
}

inline int cmd_eval(Context& ctx) {
  const auto& c = ctx.cfg;
  auto models = load_models(c);
  std::vector<PatchClassifier*> ptrs;
  for (auto& m : models) ptrs.push_back(m.get());
  check_same_classes(ptrs);
  const auto& classes = models[0]->classes();
  PredictOptions opt;
  opt.scale = c.eval.scale;
  opt.stride = c.eval.stride;
  opt.line_format = c.eval.line_format;
  opt.disallowed = disallowed_indices(c, classes);
  const auto sources = load_sources(read_image_list(c.data.test_list), classes);
  EvalResult r;
  if (c.eval.level == "image") {
    r = evaluate(ptrs, to_eval_items(sources), EvalLevel::image, opt);
  } else {
    const auto ds = build_dataset(sources, classes, c.eval.scale, c.data.stride, c.data.discard_background, Split::test);
    r = evaluate(ptrs, to_eval_items(ds), EvalLevel::patch, opt);
  }
  write_eval_report(r, ctx.dir / "report.tsv");
  ctx.out << "accuracy\t" << detail::format_double(r.accuracy) << "\n";
  return 0;
}

inline int cmd_darkness_sweep(Context& ctx) {
  const auto& c = ctx.cfg;
  auto models = load_models(c);
  auto clf = ensemble_of(models);
  const auto& classes = clf->classes();
  const auto sources = load_sources(read_image_list(c.data.test_list), classes);
  const auto ds = build_dataset(sources, classes, c.eval.scale, c.data.stride, true, Split::test);
  std::vector<SweepPatch> patches;
  for (auto i : sample_per_class(ds, static_cast<std::size_t>(c.sweep.patches_per_class), derive_seed(c.seed, kSampleSeed))) {
    const auto& p = ds.patches[i];
    patches.push_back({p.image, foreground_mask(p.image), p.label});
  }

  // Known-clean pages are trusted as is; otherwise text-free windows of the
  // test pages are averaged.
  BackgroundEstimate bg;
  if (!c.sweep.backgrounds.empty()) {
    std::vector<GrayImage> windows;
    for (const auto& page : load_background_dir(c.sweep.backgrounds)) {
      const auto scaled = resize_scale(page, c.eval.scale);
      for (auto& w : extract_training_patches(scaled, 0, kTrainPatchSize)) windows.push_back(std::move(w.image));
    }
    bg = estimate_background(windows, kTrainPatchSize, kTrainPatchSize);
  } else {
    std::vector<GrayImage> windows;
    for (const auto& s : sources) {
      const auto scaled = resize_scale(s.image, c.eval.scale);
      for (auto& w : extract_training_patches(scaled, 0, c.data.stride)) windows.push_back(std::move(w.image));
    }
    bg = estimate_background_from(windows, kTrainPatchSize, kTrainPatchSize);
  }
  save_pgm(bg.image, ctx.dir / "background.pgm");
  const auto r = darkness_sweep(*clf, patches, bg, disallowed_indices(c, classes));
  write_curve(r.curve, ctx.dir / "curve.tsv");
  write_sweep_log(r.log, classes, ctx.dir / "predictions.tsv");
  ctx.out << "level 50 accuracy\t" << detail::format_double(r.curve.accuracy[kOriginalLevel - 1]) << "\n";
  return 0;
}

inline int cmd_spacing_sweep(Context& ctx) {
  const auto& c = ctx.cfg;
  auto models = load_models(c);
  auto clf = ensemble_of(models);
  const auto& classes = clf->classes();
  const auto atlas = load_atlas(c);
  const auto specs = load_specs(c, atlas);
  const auto bgs = c.sweep.backgrounds.empty()
                       ? parchment_backgrounds(c.synth.backgrounds, c.synth.page_width, c.synth.page_height,
                                               derive_seed(c.seed, kBackgroundSeed))
                       : load_background_dir(c.sweep.backgrounds);
  const int widest = *std::max_element(c.sweep.spacings.begin(), c.sweep.spacings.end());
  const RngStream root(derive_seed(c.seed, kSpacingSeed));
  std::vector<LineSet> sets;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto it = std::find(classes.begin(), classes.end(), specs[k].name);
    if (it == classes.end()) throw DataError("spacing-sweep: model has no class '" + specs[k].name + "'");
    for (int i = 0; i < c.sweep.images_per_class; ++i) {
      RngStream rng = root.split(k).split(static_cast<std::uint64_t>(i));
      const GrayImage& bg = bgs[rng.uniform_int(bgs.size())];
      const int usable_w = bg.width() - 2 * c.synth.margin;
      const int usable_h = bg.height() - 2 * c.synth.margin;
      LineSet set{{}, bg, static_cast<int>(it - classes.begin()), c.synth.margin, c.synth.margin};
      int used = 0;
      for (;;) {
        if (c.sweep.lines_per_image > 0 && static_cast<int>(set.lines.size()) == c.sweep.lines_per_image) break;
        TextLine l = render_text_line(random_line_text(rng, specs[k], atlas, usable_w), specs[k], atlas,
                                      static_cast<std::uint8_t>(c.synth.ink));
        const int need = (set.lines.empty() ? 0 : widest) + ink_box(l.mask).height();
        if (used + need > usable_h) {
          if (c.sweep.lines_per_image > 0) throw DataError("spacing-sweep: lines_per_image lines do not fit the page");
          break;
        }
        used += need;
        l.text = apply_fg_noise(l.text, l.mask, c.synth.fg_noise_sigma, rng);
        set.lines.push_back(std::move(l));
      }
      if (set.lines.empty()) throw DataError("spacing-sweep: page too small for a single line");
      sets.push_back(std::move(set));
    }
  }
  const auto r = spacing_sweep(*clf, sets, c.sweep.spacings, disallowed_indices(c, classes));
  write_curve(r.curve, ctx.dir / "curve.tsv");
  write_sweep_log(r.log, classes, ctx.dir / "predictions.tsv");
  ctx.out << format_curve(r.curve);
  return 0;
}

}  // namespace detail

/// Validates `cfg`, creates the run directory and runs `command` in it.
/// Returns the command's exit status; errors propagate as exceptions.
inline int run_command(const std::string& command, const RunConfig& cfg, const std::filesystem::path& out_dir,
                       std::ostream& out, std::filesystem::path* run_dir = nullptr) {
  validate_config(cfg, command);
  const auto dir = run_directory(out_dir, command, cfg);
  std::filesystem::create_directories(dir);
  if (run_dir) *run_dir = dir;
  detail::write_text(dir / "config.ini", dump_config(cfg));
  out << "run directory " << dir.string() << "\n";
  detail::Context ctx{cfg, dir, out};
  if (command == "grad-check") return detail::cmd_grad_check(ctx);
  if (command == "build-dataset") return detail::cmd_build_dataset(ctx);
  if (command == "synthgen") return detail::cmd_synthgen(ctx);
  if (command == "train") return detail::cmd_train(ctx, false);
  if (command == "pretrain-finetune") return detail::cmd_train(ctx, true);
  if (command == "eval") return detail::cmd_eval(ctx);
  if (command == "darkness-sweep") return detail::cmd_darkness_sweep(ctx);
  return detail::cmd_spacing_sweep(ctx);
}

/// Exit status for an escaped exception: 1 config, 3 numerical, 2 data.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 2;
}

}  // namespace fontcnn::cli
