#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/raster.hpp"

namespace fontcnn {

inline constexpr int kTrainPatchSize = 256;
inline constexpr int kTrainStride = 42;
/// Patches whose darkest pixel is brighter than this are treated as background.
inline constexpr int kBackgroundMinIntensity = 100;

struct PatchSource {
  std::string path;
  double scale = 1.0;
  int grid_x = 0;  // column index on the extraction grid
  int grid_y = 0;  // row index on the extraction grid

  friend bool operator==(const PatchSource&, const PatchSource&) = default;
};

struct LabeledPatch {
  GrayImage image;
  int label = 0;
  PatchSource source;
};

enum class Split { train, validation, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

struct PatchDataset {
  std::vector<std::string> classes;
  std::vector<LabeledPatch> patches;
  Split split = Split::train;
  /// Classes that may not be predicted at test time (relabeled region classes).
  std::set<int> disallowed;

  std::size_t size() const { return patches.size(); }

  int class_index(const std::string& name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
  }

  /// Throws if a label is out of range or the class list has duplicates.
  void validate() const {
    std::set<std::string> seen(classes.begin(), classes.end());
    if (seen.size() != classes.size()) throw DataError("dataset class list contains duplicates");
    for (const auto& p : patches) {
      if (p.label < 0 || p.label >= static_cast<int>(classes.size())) {
        throw DataError("patch label " + std::to_string(p.label) + " outside class set");
      }
    }
  }
};

/// A labeled source page or line image.
struct SourceImage {
  GrayImage image;
  int label = 0;
  std::string path;
};

/// Number of window placements along an axis of length `dim`.
inline int window_count(int dim, int window, int stride) {
  if (dim < window) return 0;
  return (dim - window) / stride + 1;
}

/// Top-left grid positions (in pixels) of every fitting window, row-major.
inline std::vector<std::pair<int, int>> grid_positions(int width, int height, int window, int stride) {
  if (stride <= 0) throw DataError("stride must be positive");
  std::vector<std::pair<int, int>> pos;
  const int nx = window_count(width, window, stride);
  const int ny = window_count(height, window, stride);
  pos.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  for (int r = 0; r < ny; ++r)
    for (int c = 0; c < nx; ++c) pos.emplace_back(c * stride, r * stride);
  return pos;
}

/// Pads a line image with white rows to `target_h`, content vertically
/// centered (odd extra row goes below).
inline GrayImage pad_line_image(const GrayImage& img, int target_h = kTrainPatchSize) {
  if (img.height() > target_h) {
    throw DataError("line image height " + std::to_string(img.height()) + " exceeds target " + std::to_string(target_h));
  }
  return pad_to_min(img, img.width(), target_h, 255);
}

inline bool is_background_patch(const GrayImage& patch) {
  const auto m = *std::min_element(patch.pixels().begin(), patch.pixels().end());
  return m > kBackgroundMinIntensity;
}

/// All 256x256 training windows at `stride`. Images smaller than a window
/// are white-padded first.
inline std::vector<LabeledPatch> extract_training_patches(const GrayImage& img, int label, int stride = kTrainStride,
                                                          const std::string& path = {}, double scale = 1.0) {
  const GrayImage src = pad_to_min(img, kTrainPatchSize, kTrainPatchSize, 255);
  std::vector<LabeledPatch> out;
  for (auto [x, y] : grid_positions(src.width(), src.height(), kTrainPatchSize, stride)) {
    out.push_back({crop(src, x, y, kTrainPatchSize, kTrainPatchSize), label, {path, scale, x / stride, y / stride}});
  }
  return out;
}

/// Resize, pad, patch and (optionally) drop background patches. Output
/// order is page order, then row-major grid order.
inline PatchDataset build_dataset(const std::vector<SourceImage>& pages, const std::vector<std::string>& classes,
                                  double scale, int stride = kTrainStride, bool discard_background = true,
                                  Split split = Split::train) {
  PatchDataset ds;
  ds.classes = classes;
  ds.split = split;
  for (const auto& page : pages) {
    if (page.label < 0 || page.label >= static_cast<int>(classes.size())) {
      throw DataError("page " + page.path + " has label outside class set");
    }
    const GrayImage scaled = resize_scale(page.image, scale);
    for (auto& p : extract_training_patches(scaled, page.label, stride, page.path, scale)) {
      if (discard_background && is_background_patch(p.image)) continue;
      ds.patches.push_back(std::move(p));
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Region annotations and relabeling
// ---------------------------------------------------------------------------

enum class Region { text, background, figure, annotation };

inline const char* to_string(Region r) {
  switch (r) {
    case Region::text: return "text";
    case Region::background: return "background";
    case Region::figure: return "figure";
    case Region::annotation: return "annotation";
  }
  return "?";
}

inline Region parse_region(const std::string& s) {
  if (s == "text") return Region::text;
  if (s == "background") return Region::background;
  if (s == "figure") return Region::figure;
  if (s == "annotation") return Region::annotation;
  throw DataError("unknown region label '" + s + "'");
}

struct RegionAnnotation {
  std::string path;
  int grid_x = 0;
  int grid_y = 0;
  Region region = Region::text;
};

enum class RelabelMode { filtered, extended, noise };

inline RelabelMode parse_relabel_mode(const std::string& s) {
  if (s == "filtered") return RelabelMode::filtered;
  if (s == "extended") return RelabelMode::extended;
  if (s == "noise") return RelabelMode::noise;
  throw DataError("unknown relabel mode '" + s + "'");
}

inline const std::string kTextClass = "Text";

/// Relabels a dataset using per-patch region annotations:
///  - filtered: non-text patches are dropped, classes unchanged;
///  - extended: non-text patches move to new background/figure/annotation
///    classes, which become disallowed at test time;
///  - noise: text patches move to a new "Text" class (disallowed), non-text
///    patches keep their original class.
inline PatchDataset relabel_dataset(const PatchDataset& ds, const std::vector<RegionAnnotation>& annotations,
                                    RelabelMode mode) {
  std::map<std::tuple<std::string, int, int>, Region> lookup;
  for (const auto& a : annotations) lookup[{a.path, a.grid_x, a.grid_y}] = a.region;

  PatchDataset out;
  out.classes = ds.classes;
  out.split = ds.split;
  out.disallowed = ds.disallowed;

  auto add_class = [&](const std::string& name) {
    int idx = out.class_index(name);
    if (idx < 0) {
      out.classes.push_back(name);
      idx = static_cast<int>(out.classes.size()) - 1;
    }
    out.disallowed.insert(idx);
    return idx;
  };

  std::map<Region, int> region_class;
  int text_class = -1;
  if (mode == RelabelMode::extended) {
    for (Region r : {Region::background, Region::figure, Region::annotation}) region_class[r] = add_class(to_string(r));
  } else if (mode == RelabelMode::noise) {
    text_class = add_class(kTextClass);
  }

  for (const auto& p : ds.patches) {
    auto it = lookup.find({p.source.path, p.source.grid_x, p.source.grid_y});
    if (it == lookup.end()) {
      throw DataError("no region annotation for patch " + p.source.path + " (" + std::to_string(p.source.grid_x) +
                      "," + std::to_string(p.source.grid_y) + ")");
    }
    const bool textual = it->second == Region::text;
    LabeledPatch q = p;
    switch (mode) {
      case RelabelMode::filtered:
        if (!textual) continue;
        break;
      case RelabelMode::extended:
        if (!textual) q.label = region_class.at(it->second);
        break;
      case RelabelMode::noise:
        if (textual) q.label = text_class;
        break;
    }
    out.patches.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text files: manifests, annotation sidecars, image lists
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

template <typename Fn>
void for_each_data_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    fn(split_tabs(line), lineno);
  }
}

inline std::string format_scale(double s) {
  std::ostringstream os;
  os.precision(17);
  os << s;
  return os.str();
}

}  // namespace detail

/// One line per patch: source-path, scale, grid-x, grid-y, label-name.
inline void write_manifest(const PatchDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : ds.patches) {
    out << p.source.path << '\t' << detail::format_scale(p.source.scale) << '\t' << p.source.grid_x << '\t'
        << p.source.grid_y << '\t' << ds.classes.at(static_cast<std::size_t>(p.label)) << '\n';
  }
}

struct ManifestEntry {
  PatchSource source;
  std::string label;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestEntry> out;
  detail::for_each_data_line(path, [&](const std::vector<std::string>& f, int lineno) {
    if (f.size() != 5) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      out.push_back({{f[0], std::stod(f[1]), std::stoi(f[2]), std::stoi(f[3])}, f[4]});
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad numeric field");
    }
  });
  return out;
}

/// Re-derives patch pixels for every manifest entry from its source image.
/// `stride` must be the stride the manifest was built with.
inline PatchDataset load_manifest_dataset(const std::filesystem::path& path, const std::vector<std::string>& classes,
                                          int stride = kTrainStride) {
  PatchDataset ds;
  ds.classes = classes;
  std::map<std::pair<std::string, double>, GrayImage> cache;
  for (const auto& e : read_manifest(path)) {
    const int label = ds.class_index(e.label);
    if (label < 0) throw DataError("manifest label '" + e.label + "' not in class list");
    auto key = std::make_pair(e.source.path, e.source.scale);
    auto it = cache.find(key);
    if (it == cache.end()) {
      GrayImage src = pad_to_min(resize_scale(load_pgm(e.source.path), e.source.scale), kTrainPatchSize,
                                 kTrainPatchSize, 255);
      it = cache.emplace(key, std::move(src)).first;
    }
    ds.patches.push_back({crop(it->second, e.source.grid_x * stride, e.source.grid_y * stride, kTrainPatchSize,
                               kTrainPatchSize),
                          label, e.source});
  }
  return ds;
}

/// Writes patches as `<root>/<class>/<source-stem>_<x>_<y>.pgm`.
inline void materialize_patches(const PatchDataset& ds, const std::filesystem::path& root) {
  for (const auto& p : ds.patches) {
    const auto dir = root / ds.classes.at(static_cast<std::size_t>(p.label));
    std::filesystem::create_directories(dir);
    const std::string stem = std::filesystem::path(p.source.path).stem().string();
    save_pgm(p.image, dir / (stem + "_" + std::to_string(p.source.grid_x) + "_" + std::to_string(p.source.grid_y) + ".pgm"));
  }
}

/// Annotation sidecar: source-path, grid-x, grid-y, region-label.
inline std::vector<RegionAnnotation> read_annotations(const std::filesystem::path& path) {
  std::vector<RegionAnnotation> out;
  detail::for_each_data_line(path, [&](const std::vector<std::string>& f, int lineno) {
    if (f.size() != 4) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      out.push_back({f[0], std::stoi(f[1]), std::stoi(f[2]), parse_region(f[3])});
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad numeric field");
    }
  });
  return out;
}

inline void write_annotations(const std::vector<RegionAnnotation>& anns, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& a : anns) out << a.path << '\t' << a.grid_x << '\t' << a.grid_y << '\t' << to_string(a.region) << '\n';
}

/// Image list: one `path<TAB>class-name` per line. Relative paths resolve
/// against the list's directory.
struct ImageListEntry {
  std::string path;
  std::string label;
};

inline std::vector<ImageListEntry> read_image_list(const std::filesystem::path& path) {
  std::vector<ImageListEntry> out;
  const auto base = path.parent_path();
  detail::for_each_data_line(path, [&](const std::vector<std::string>& f, int lineno) {
    if (f.size() != 2) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected path<TAB>label");
    std::filesystem::path p(f[0]);
    if (p.is_relative()) p = base / p;
    out.push_back({p.lexically_normal().string(), f[1]});
  });
  return out;
}

inline void write_image_list(const std::vector<ImageListEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : entries) out << e.path << '\t' << e.label << '\n';
}

/// Loads every image in a list, mapping labels through `classes`.
inline std::vector<SourceImage> load_sources(const std::vector<ImageListEntry>& entries,
                                             const std::vector<std::string>& classes) {
  std::vector<SourceImage> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    auto it = std::find(classes.begin(), classes.end(), e.label);
    if (it == classes.end()) throw DataError("image " + e.path + " has unknown class '" + e.label + "'");
    out.push_back({load_pgm(e.path), static_cast<int>(it - classes.begin()), e.path});
  }
  return out;
}

}  // namespace fontcnn
