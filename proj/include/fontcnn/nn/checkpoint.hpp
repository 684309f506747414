#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/nn/network.hpp"
#include "fontcnn/raster.hpp"

namespace fontcnn::nn {

// Layout (all integers little-endian):
//   "FCNNCKPT"                       8-byte magic
//   u32 version                      currently 1
//   u32 n, n bytes                   description text: topology lines, then
//                                    "classes\t<name>\t<name>..."
//   u32 tensor count
//   per tensor: u32 n, name bytes; u32 rank; rank x u64 dims;
//               product(dims) x f32 raw values
inline constexpr char kCheckpointMagic[8] = {'F', 'C', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  Topology topology;
  std::vector<std::string> classes;
  std::vector<NamedTensor> tensors;  // parameters then buffers, network order

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

/// Trained network together with its class names.
struct Model {
  Network<float> net;
  std::vector<std::string> classes;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t uint(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const char* what) { return uint(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::size_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Checkpoint make_checkpoint(Network<float>& net, const std::vector<std::string>& classes) {
  Checkpoint c;
  c.topology = Topology::parse(net.topology_text());
  c.classes = classes;
  for (auto& p : net.parameters()) c.tensors.push_back({p.name, p.param->value});
  for (auto& b : net.buffers()) c.tensors.push_back({b.name, *b.tensor});
  return c;
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  std::string desc = c.topology.to_text() + "classes";
  for (const auto& name : c.classes) desc += "\t" + name;
  desc += "\n";
  w.str(desc);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) w.u64(d);
    for (float v : t.tensor.span()) w.f32(v);
  }
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.need(sizeof kCheckpointMagic, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) throw ParseError("not a checkpoint (bad magic)", 0);
  r.uint(4, "magic");
  r.uint(4, "magic");
  const std::size_t version_at = r.pos();
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  Checkpoint c;
  const std::string desc = r.str("description");
  std::istringstream in(desc);
  std::string line, topo;
  while (std::getline(in, line)) {
    if (line.rfind("classes", 0) == 0) {
      std::istringstream ls(line.substr(7));
      std::string name;
      while (std::getline(ls, name, '\t'))
        if (!name.empty()) c.classes.push_back(name);
    } else {
      topo += line + "\n";
    }
  }
  c.topology = Topology::parse(topo);
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), r.pos());
    std::vector<std::size_t> shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.u64("tensor dim")));
    r.need(Tensor<float>::count(shape) * 4, "tensor data");
    t.tensor = Tensor<float>(shape);
    for (auto& v : t.tensor.span()) v = r.f32("tensor data");
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint", r.pos());
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Copies every tensor of `c` into `net`. Names and shapes must match.
inline void apply_checkpoint(const Checkpoint& c, Network<float>& net) {
  auto assign = [&](const std::string& name, Tensor<float>& dst) {
    const NamedTensor* t = c.find(name);
    if (!t) throw ShapeError("checkpoint has no tensor '" + name + "'");
    if (t->tensor.shape() != dst.shape()) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_string(t->tensor.shape()) + ", model expects " +
                       shape_string(dst.shape()));
    }
    dst = t->tensor;
  };
  for (auto& p : net.parameters()) assign(p.name, p.param->value);
  for (auto& b : net.buffers()) assign(b.name, *b.tensor);
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m{Network<float>(c.topology), c.classes};
  if (m.net.num_classes() != c.classes.size()) throw ShapeError("checkpoint class list does not match classifier width");
  apply_checkpoint(c, m.net);
  return m;
}

inline Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

inline void save_model(Model& m, const std::filesystem::path& path) { save_checkpoint(make_checkpoint(m.net, m.classes), path); }

/// FNV-1a over the raw float bytes of a tensor.
inline std::uint64_t tensor_checksum(const Tensor<float>& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float v : t.span()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

/// Prepares a network for finetuning: builds `target` (same layers as the
/// checkpoint except the classifier width), copies every tensor outside the
/// classifier layer verbatim and re-initializes the classifier from `seed`.
/// Throws ShapeError naming the first incompatible layer.
inline Network<float> finetune_from(const Checkpoint& pre, const Topology& target, std::uint64_t seed) {
  if (!(pre.topology.input == target.input)) {
    throw ShapeError("finetune: input shape " + target.input.str() + " differs from checkpoint " + pre.topology.input.str());
  }
  Network<float> net(target);
  net.init(seed);
  const std::size_t head = net.classifier_layer();
  const std::size_t n = std::min(pre.topology.layers.size(), target.layers.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i == head) continue;
    if (!(pre.topology.layers[i] == target.layers[i])) {
      throw ShapeError("finetune: layer " + std::to_string(i) + " differs: checkpoint '" + describe(pre.topology.layers[i]) +
                       "' vs model '" + describe(target.layers[i]) + "'");
    }
  }
  if (pre.topology.layers.size() != target.layers.size()) {
    throw ShapeError("finetune: layer " + std::to_string(n) + " differs: checkpoint has " +
                     std::to_string(pre.topology.layers.size()) + " layers, model has " + std::to_string(target.layers.size()));
  }
  const auto& head_spec = pre.topology.layers[head];
  if (head_spec.kind != LayerKind::fully_connected) {
    throw ShapeError("finetune: layer " + std::to_string(head) + " is not the checkpoint classifier");
  }
  auto copy = [&](const std::string& name, std::size_t layer, Tensor<float>& dst) {
    if (layer == head) return;
    const NamedTensor* t = pre.find(name);
    if (!t || t->tensor.shape() != dst.shape()) {
      throw ShapeError("finetune: layer " + std::to_string(layer) + " tensor '" + name + "' missing or mis-shaped in checkpoint");
    }
    dst = t->tensor;
  };
  for (auto& p : net.parameters()) copy(p.name, p.layer, p.param->value);
  for (auto& b : net.buffers()) copy(b.name, b.layer, *b.tensor);
  return net;
}

}  // namespace fontcnn::nn
