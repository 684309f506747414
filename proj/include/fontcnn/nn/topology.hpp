#pragma once

#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/nn/layers.hpp"

namespace fontcnn::nn {

/// One line of a topology description.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out = 0;     // conv / fc / residual output channels
  std::size_t kernel = 0;  // conv
  std::size_t stride = 1;  // conv / maxpool / residual
  std::size_t pad = 0;     // conv
  std::size_t window = 0;  // maxpool

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Network layout as a list of layer specs. The text form is one layer per
/// line, e.g.
///
///   input 1 227 227
///   conv out=8 kernel=5 stride=2 pad=2
///   batchnorm
///   relu
///   maxpool window=2 stride=2
///   residual out=16 stride=2
///   global_avgpool
///   fc out=4
///   softmax
struct Topology {
  FeatureShape input{1, 227, 227};
  std::vector<LayerSpec> layers;

  friend bool operator==(const Topology&, const Topology&) = default;

  std::string to_text() const;
  static Topology parse(const std::string& text);
};

inline std::string describe(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::conv:
      return "conv out=" + std::to_string(s.out) + " kernel=" + std::to_string(s.kernel) +
             " stride=" + std::to_string(s.stride) + " pad=" + std::to_string(s.pad);
    case LayerKind::maxpool: return "maxpool window=" + std::to_string(s.window) + " stride=" + std::to_string(s.stride);
    case LayerKind::fully_connected: return "fc out=" + std::to_string(s.out);
    case LayerKind::residual_block: return "residual out=" + std::to_string(s.out) + " stride=" + std::to_string(s.stride);
    default: return to_string(s.kind);
  }
}

inline std::string Topology::to_text() const {
  std::string out = "input " + std::to_string(input.c) + " " + std::to_string(input.h) + " " + std::to_string(input.w) + "\n";
  for (const auto& l : layers) out += describe(l) + "\n";
  return out;
}

inline Topology Topology::parse(const std::string& text) {
  Topology t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_input = false;
  auto fail = [&](const std::string& msg) { throw ShapeError("topology line " + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word) || word[0] == '#') continue;
    if (word == "input") {
      if (!(ls >> t.input.c >> t.input.h >> t.input.w)) fail("input expects channels height width");
      have_input = true;
      continue;
    }
    std::map<std::string, std::size_t> kv;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) fail("expected key=value, got '" + tok + "'");
      try {
        kv[tok.substr(0, eq)] = std::stoul(tok.substr(eq + 1));
      } catch (const std::logic_error&) {
        fail("bad number in '" + tok + "'");
      }
    }
    auto take = [&](const char* key, std::optional<std::size_t> def = std::nullopt) -> std::size_t {
      auto it = kv.find(key);
      if (it == kv.end()) {
        if (!def) fail(word + " requires " + key);
        return *def;
      }
      const std::size_t v = it->second;
      kv.erase(it);
      return v;
    };
    LayerSpec s;
    if (word == "conv") {
      s.kind = LayerKind::conv;
      s.out = take("out");
      s.kernel = take("kernel");
      s.stride = take("stride", 1);
      s.pad = take("pad", 0);
    } else if (word == "relu") {
      s.kind = LayerKind::relu;
    } else if (word == "maxpool") {
      s.kind = LayerKind::maxpool;
      s.window = take("window");
      s.stride = take("stride", s.window);
    } else if (word == "fc") {
      s.kind = LayerKind::fully_connected;
      s.out = take("out");
    } else if (word == "batchnorm") {
      s.kind = LayerKind::batchnorm;
    } else if (word == "residual") {
      s.kind = LayerKind::residual_block;
      s.out = take("out");
      s.stride = take("stride", 1);
    } else if (word == "global_avgpool") {
      s.kind = LayerKind::global_avgpool;
    } else if (word == "softmax") {
      s.kind = LayerKind::softmax;
    } else {
      fail("unknown layer kind '" + word + "'");
    }
    if (!kv.empty()) fail("unknown parameter '" + kv.begin()->first + "' for " + word);
    t.layers.push_back(s);
  }
  if (!have_input) throw ShapeError("topology has no input line");
  if (t.layers.empty()) throw ShapeError("topology has no layers");
  return t;
}

/// Instantiates one layer for the given input shape.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s, FeatureShape in) {
  switch (s.kind) {
    case LayerKind::conv: return std::make_unique<Conv2d<T>>(in, s.out, s.kernel, s.stride, s.pad);
    case LayerKind::relu: return std::make_unique<Relu<T>>(in);
    case LayerKind::maxpool: return std::make_unique<MaxPool2d<T>>(in, s.window, s.stride);
    case LayerKind::fully_connected: return std::make_unique<FullyConnected<T>>(in, s.out);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm2d<T>>(in);
    case LayerKind::residual_block: return std::make_unique<ResidualBlock<T>>(in, s.out, s.stride);
    case LayerKind::global_avgpool: return std::make_unique<GlobalAvgPool<T>>(in);
    case LayerKind::softmax: return std::make_unique<Softmax<T>>(in);
  }
  throw ShapeError("unknown layer kind");
}

/// AlexNet-style analogue: three conv/relu/maxpool stages, two fc layers.
inline Topology mini_plain(std::size_t classes, std::size_t input = 227) {
  Topology t;
  t.input = {1, input, input};
  using K = LayerKind;
  t.layers = {
      {K::conv, 8, 5, 4, 0, 0}, {K::relu},  {K::maxpool, 0, 0, 2, 0, 2},
      {K::conv, 16, 3, 1, 0, 0}, {K::relu}, {K::maxpool, 0, 0, 2, 0, 2},
      {K::conv, 32, 3, 1, 0, 0}, {K::relu}, {K::maxpool, 0, 0, 2, 0, 2},
      {K::fully_connected, 64},  {K::relu}, {K::fully_connected, classes},
      {K::softmax},
  };
  return t;
}

/// ResNet-style analogue: stem conv, three residual blocks, global average
/// pooling and a linear classifier. "Same" padding throughout.
inline Topology mini_residual(std::size_t classes, std::size_t input = 227) {
  Topology t;
  t.input = {1, input, input};
  using K = LayerKind;
  t.layers = {
      {K::conv, 8, 5, 2, 2, 0},
      {K::batchnorm},
      {K::relu},
      {K::maxpool, 0, 0, 2, 0, 2},
      {K::residual_block, 8, 0, 2},
      {K::residual_block, 16, 0, 2},
      {K::residual_block, 32, 0, 2},
      {K::global_avgpool},
      {K::fully_connected, classes},
      {K::softmax},
  };
  return t;
}

inline Topology builtin_topology(const std::string& name, std::size_t classes, std::size_t input = 227) {
  if (name == "mini-plain") return mini_plain(classes, input);
  if (name == "mini-residual") return mini_residual(classes, input);
  throw ShapeError("unknown built-in topology '" + name + "'");
}

}  // namespace fontcnn::nn
