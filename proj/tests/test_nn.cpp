#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fontcnn/nn/grad_check.hpp"
#include "fontcnn/nn/network.hpp"
#include "fontcnn/nn/sgd.hpp"

using namespace fontcnn;
using namespace fontcnn::nn;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  RngStream r(seed);
  for (auto& v : t.span()) v = r.normal(0.0, sd);
  return t;
}

// Direct convolution: every output is an explicit dot product over the
// zero-padded receptive field.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t stride,
                          std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, co, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += w[((o * ci + c) * k + ky) * k + kx] *
                       x[((s * ci + c) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
              }
          y[((s * co + o) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

// Conv layer whose weight gradient comes out with the wrong sign.
class FlippedConv final : public Layer<double> {
 public:
  FlippedConv(FeatureShape in, std::size_t out, std::size_t k) : conv_(in, out, k, 1, 0) {}
  LayerKind kind() const override { return LayerKind::conv; }
  std::string describe() const override { return conv_.describe(); }
  FeatureShape output_shape() const override { return conv_.output_shape(); }
  std::unique_ptr<Layer<double>> clone() const override { return std::make_unique<FlippedConv>(*this); }
  void forward(const Tensor<double>& in, Tensor<double>& out, bool t) override { conv_.forward(in, out, t); }
  void backward(const Tensor<double>& in, const Tensor<double>& out, const Tensor<double>& dout,
                Tensor<double>* din) override {
    conv_.backward(in, out, dout, din);
    for (auto& g : conv_.weight().grad.span()) g = -g;
  }
  std::vector<Param<double>*> params() override { return conv_.params(); }
  void init(RngStream& r) override { conv_.init(r); }

 private:
  Conv2d<double> conv_;
};

Topology tiny_plain(std::size_t classes) {
  using K = LayerKind;
  Topology t;
  t.input = {1, 8, 8};
  t.layers = {{K::conv, 3, 3, 1, 0, 0}, {K::relu}, {K::maxpool, 0, 0, 2, 0, 2}, {K::fully_connected, classes}, {K::softmax}};
  return t;
}

}  // namespace

TEST(Conv, FiveByFiveThreeByThreeMatchesNaive) {
  Conv2d<double> conv({1, 5, 5}, 1, 3, 1, 0);
  EXPECT_EQ(conv.output_shape(), (FeatureShape{1, 3, 3}));
  RngStream r(1);
  conv.init(r);
  conv.bias().value[0] = 0.25;
  const auto x = random_tensor({1, 1, 5, 5}, 2);
  Tensor<double> y;
  conv.forward(x, y, false);
  const auto ref = naive_conv(x, conv.weight().value, conv.bias().value, 1, 0);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv, RandomGeometriesMatchNaive) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ci = 1 + gen() % 3, co = 1 + gen() % 4, k = 1 + gen() % 4, stride = 1 + gen() % 3, pad = gen() % 3;
    const std::size_t h = k + gen() % 7, w = k + gen() % 7;
    Conv2d<double> conv({ci, h, w}, co, k, stride, pad);
    RngStream r(static_cast<std::uint64_t>(trial));
    conv.init(r);
    for (auto& v : conv.bias().value.span()) v = r.normal();
    const auto x = random_tensor({2, ci, h, w}, 100 + static_cast<std::uint64_t>(trial));
    Tensor<double> y;
    conv.forward(x, y, false);
    const auto ref = naive_conv(x, conv.weight().value, conv.bias().value, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-10);
  }
}

TEST(Conv, KernelLargerThanInputIsShapeError) { EXPECT_THROW(Conv2d<float>({1, 3, 3}, 2, 5, 1, 0), ShapeError); }

TEST(MaxPool, PicksWindowMaximum) {
  MaxPool2d<double> pool({1, 4, 4}, 2, 2);
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>((i * 7) % 16);
  Tensor<double> y;
  pool.forward(x, y, false);
  ASSERT_EQ(y.size(), 4u);
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox) {
      double m = -1;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x[(oy * 2 + dy) * 4 + ox * 2 + dx]);
      EXPECT_EQ(y[oy * 2 + ox], m);
    }
}

TEST(Softmax, UniformLogits) {
  Softmax<double> sm({3, 1, 1});
  Tensor<double> x({1, 3, 1, 1}, 0.0), y;
  sm.forward(x, y, false);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  Softmax<double> sm({5, 1, 1});
  const auto x = random_tensor({2, 5, 1, 1}, 4);
  const auto g = random_tensor({2, 5, 1, 1}, 5);
  Tensor<double> y, dx;
  sm.forward(x, y, false);
  sm.backward(x, y, g, &dx);
  auto f = [&](const Tensor<double>& in) {
    Tensor<double> out;
    sm.forward(in, out, false);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * g[i];
    return s;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp[i] += 1e-5;
    xm[i] -= 1e-5;
    EXPECT_NEAR(dx[i], (f(xp) - f(xm)) / 2e-5, 1e-8);
  }
}

TEST(Softmax, OutputsSumToOneOnBuiltins) {
  for (const auto& topo : {mini_plain(5), mini_residual(5)}) {
    Network<float> net(topo);
    net.init(3);
    Tensor<float> x({3, 1, 227, 227});
    RngStream r(9);
    for (auto& v : x.span()) v = static_cast<float>(r.uniform());
    for (bool training : {true, false}) {
      const auto& p = net.forward(x, training);
      for (std::size_t n = 0; n < 3; ++n) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) {
          EXPECT_GE(p[n * 5 + c], 0.0f);
          s += p[n * 5 + c];
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
    }
  }
}

TEST(Residual, ZeroBranchIsIdentity) {
  ResidualBlock<double> block({4, 6, 6}, 4, 1);
  EXPECT_FALSE(block.has_projection());
  RngStream r(2);
  block.init(r);
  for (auto* p : block.params()) {
    if (p->name.find("gamma") != std::string::npos || p->name.find("weight") != std::string::npos) p->value.fill(0.0);
  }
  const auto x = random_tensor({2, 4, 6, 6}, 7);
  Tensor<double> y;
  for (bool training : {true, false}) {
    block.forward(x, y, training);
    EXPECT_EQ(y, x);
  }
}

TEST(Residual, ProjectionWhenShapesDiffer) {
  EXPECT_TRUE(ResidualBlock<float>({4, 8, 8}, 8, 1).has_projection());
  EXPECT_TRUE(ResidualBlock<float>({4, 8, 8}, 4, 2).has_projection());
  const ResidualBlock<float> b({4, 8, 8}, 6, 2);
  EXPECT_EQ(b.output_shape(), (FeatureShape{6, 4, 4}));
}

TEST(Network, BuildErrorNamesLayer) {
  Topology t = tiny_plain(3);
  t.layers.insert(t.layers.begin() + 3, {LayerKind::conv, 2, 9, 1, 0, 0});
  try {
    Network<float> net(t);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 3"), std::string::npos) << e.what();
  }
  Topology no_softmax = tiny_plain(3);
  no_softmax.layers.pop_back();
  EXPECT_THROW(Network<float>{no_softmax}, ShapeError);
}

TEST(Network, InputShapeCheckedAtForward) {
  Network<float> net(tiny_plain(2));
  net.init(1);
  EXPECT_THROW(net.forward(Tensor<float>({1, 1, 9, 8}), false), ShapeError);
}

TEST(Network, UniformPredictionLossIsLogC) {
  for (std::size_t c : {2u, 3u, 7u}) {
    Network<double> net(tiny_plain(c));
    net.init(1);
    for (auto& p : net.parameters())
      if (p.layer == net.classifier_layer()) p.param->value.fill(0.0);
    net.forward(random_tensor({3, 1, 8, 8}, 3), true);
    const std::vector<int> labels{0, 1, 0};
    EXPECT_NEAR(net.loss(labels), std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(Network, DuplicatedSampleGivesSameMeanGradient) {
  Network<double> a(tiny_plain(3));
  a.init(5);
  Network<double> b = a;
  const auto x1 = random_tensor({1, 1, 8, 8}, 1);
  Tensor<double> x2({2, 1, 8, 8});
  std::copy(x1.data(), x1.data() + 64, x2.data());
  std::copy(x1.data(), x1.data() + 64, x2.data() + 64);
  a.forward(x1, true);
  const std::vector<int> l1{2}, l2{2, 2};
  const double la = a.backward(l1);
  b.forward(x2, true);
  const double lb = b.backward(l2);
  EXPECT_NEAR(la, lb, 1e-14);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].param->grad.size(); ++k)
      EXPECT_NEAR(pa[i].param->grad[k], pb[i].param->grad[k], 1e-14);
}

TEST(Network, LabelOutOfRangeThrows) {
  Network<float> net(tiny_plain(2));
  net.init(1);
  net.forward(Tensor<float>({1, 1, 8, 8}), true);
  const std::vector<int> bad{2};
  EXPECT_THROW(net.backward(bad), DataError);
}

TEST(Network, FloatAndDoubleAgree) {
  Network<double> d(mini_residual(4, 64));
  d.init(8);
  Network<float> f(mini_residual(4, 64));
  f.copy_values_from(d);
  const auto x = random_tensor({2, 1, 64, 64}, 6);
  const auto& pd = d.forward(x, false);
  const auto& pf = f.forward(x.cast<float>(), false);
  for (std::size_t i = 0; i < pd.size(); ++i) EXPECT_NEAR(pd[i], pf[i], 1e-5);
}

TEST(Network, ParameterNamesAreStable) {
  Network<float> net(mini_residual(3));
  std::vector<std::string> names;
  for (auto& p : net.parameters()) names.push_back(p.name);
  EXPECT_EQ(names.front(), "0.conv.weight");
  EXPECT_NE(std::find(names.begin(), names.end(), "5.residual.projection.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "4.residual.bn2.gamma"), names.end());
  EXPECT_EQ(names.back(), "8.fc.bias");
}

TEST(BatchNorm, InferenceIndependentOfBatchComposition) {
  BatchNorm2d<double> bn({3, 4, 4});
  const auto warm = random_tensor({4, 3, 4, 4}, 1, 2.0);
  Tensor<double> y;
  for (int i = 0; i < 5; ++i) bn.forward(warm, y, true);  // update running stats
  const auto a = random_tensor({1, 3, 4, 4}, 2);
  const auto others = random_tensor({3, 3, 4, 4}, 3, 5.0);
  Tensor<double> batch({4, 3, 4, 4});
  std::copy(a.data(), a.data() + a.size(), batch.data());
  std::copy(others.data(), others.data() + others.size(), batch.data() + a.size());
  Tensor<double> ya, yb;
  bn.forward(a, ya, false);
  bn.forward(batch, yb, false);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(BatchNorm, TrainingOutputIsNormalized) {
  BatchNorm2d<double> bn({2, 3, 3});
  const auto x = random_tensor({5, 2, 3, 3}, 4, 3.0);
  Tensor<double> y;
  bn.forward(x, y, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        const double v = y[(n * 2 + c) * 9 + i];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 45, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 45, 1.0, 1e-3);
  }
}

TEST(Topology, TextRoundTrip) {
  for (const auto& t : {mini_plain(12), mini_residual(27, 113), random_small_topology(4)}) {
    const Topology back = Topology::parse(t.to_text());
    EXPECT_EQ(back.to_text(), t.to_text());
    EXPECT_EQ(back.layers, t.layers);
  }
}

TEST(Topology, ParseErrorsNameLine) {
  try {
    Topology::parse("input 1 8 8\nconv out=2 kernel=3\nfoo\n");
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(Topology::parse("input 1 8 8\nconv out=2\n"), ShapeError);
  EXPECT_THROW(Topology::parse("input 1 8 8\nfc out=2 bias=1\n"), ShapeError);
  EXPECT_THROW(builtin_topology("alexnet", 3), ShapeError);
}

TEST(Sgd, NoGradNoDecayIsNoop) {
  Param<float> p("w", {3}, true);
  p.value[0] = 1.5f;
  TrainConfig cfg;
  cfg.weight_decay = 0;
  std::vector<Param<float>*> ps{&p};
  sgd_step<float>(ps, cfg, 0);
  EXPECT_EQ(p.value[0], 1.5f);
}

TEST(Sgd, HandUnrolledMomentum) {
  Param<double> p("w", {1}, true);
  p.value[0] = 1.0;
  p.grad[0] = 1.0;
  TrainConfig cfg;
  cfg.lr = LrSchedule::parse("0:0.1");
  cfg.weight_decay = 0;
  std::vector<Param<double>*> ps{&p};
  sgd_step<double>(ps, cfg, 0);
  EXPECT_NEAR(p.value[0], 0.9, 1e-15);
  EXPECT_NEAR(p.momentum[0], 1.0, 1e-15);
  sgd_step<double>(ps, cfg, 1);
  EXPECT_NEAR(p.momentum[0], 1.9, 1e-15);
  EXPECT_NEAR(p.value[0], 0.71, 1e-15);
}

TEST(Sgd, PureDecayAndNoDecayForBiases) {
  Param<double> w("w", {1}, true), b("b", {1}, false);
  w.value[0] = 1.0;
  b.value[0] = 1.0;
  TrainConfig cfg;
  cfg.lr = LrSchedule::parse("0:1");
  std::vector<Param<double>*> ps{&w, &b};
  sgd_step<double>(ps, cfg, 0);
  EXPECT_NEAR(w.value[0], 0.9995, 1e-15);
  EXPECT_EQ(b.value[0], 1.0);
}

TEST(Sgd, ScheduleAndValidation) {
  const auto s = LrSchedule::parse("0:0.01,1500:0.001");
  EXPECT_EQ(s.at(0), 0.01);
  EXPECT_EQ(s.at(1499), 0.01);
  EXPECT_EQ(s.at(1500), 0.001);
  EXPECT_EQ(LrSchedule::parse(s.to_string()), s);
  EXPECT_THROW(LrSchedule::parse("5:0.1,2:0.1"), DataError);
  EXPECT_THROW(LrSchedule::parse("x"), DataError);
  TrainConfig cfg;
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), DataError);
}

TEST(GradCheck, RandomSmallModelsPass) {
  GradCheckReport all;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto report = grad_check_topology(random_small_topology(seed), 2, seed);
    EXPECT_TRUE(report.passed()) << "seed " << seed << "\n" << report.to_string();
    all.merge(report);
  }
  for (const char* kind : {"conv", "fc", "batchnorm", "residual", "softmax", "relu"}) {
    ASSERT_NE(all.find(kind), nullptr) << kind;
    EXPECT_GT(all.find(kind)->checked, 0u) << kind;
  }
}

TEST(GradCheck, BuiltinsAtReducedSize) {
  GradCheckOptions opt;
  opt.max_coords = 40;
  EXPECT_TRUE(grad_check_topology(mini_plain(3, 99), 2, 1, opt).passed());
  EXPECT_TRUE(grad_check_topology(mini_residual(3, 64), 2, 1, opt).passed());
}

TEST(GradCheck, DetectsSignFlippedConv) {
  const FeatureShape in{1, 8, 8};
  std::vector<std::unique_ptr<Layer<double>>> layers;
  layers.push_back(std::make_unique<FlippedConv>(in, 3, 3));
  layers.push_back(std::make_unique<Relu<double>>(FeatureShape{3, 6, 6}));
  layers.push_back(std::make_unique<FullyConnected<double>>(FeatureShape{3, 6, 6}, 3));
  layers.push_back(std::make_unique<Softmax<double>>(FeatureShape{3, 1, 1}));
  Network<double> net(in, std::move(layers));
  net.init(3);
  const auto x = random_tensor({2, 1, 8, 8}, 4);
  const std::vector<int> labels{0, 2};
  const auto report = grad_check(net, x, labels);
  EXPECT_FALSE(report.passed());
  EXPECT_GT(report.find("conv")->max_rel_error, 0.5);
  EXPECT_LT(report.find("fc")->max_rel_error, 1e-3);
}

TEST(GradCheck, ReluKinksExcluded) {
  // Inputs within the margin are never compared, so a relu whose inputs all
  // sit near zero contributes no checked coordinates.
  const FeatureShape in{1, 4, 4};
  std::vector<std::unique_ptr<Layer<double>>> layers;
  layers.push_back(std::make_unique<Relu<double>>(in));
  layers.push_back(std::make_unique<FullyConnected<double>>(in, 2));
  layers.push_back(std::make_unique<Softmax<double>>(FeatureShape{2, 1, 1}));
  Network<double> net(in, std::move(layers));
  net.init(1);
  auto x = random_tensor({1, 1, 4, 4}, 2, 0.001);
  const std::vector<int> labels{1};
  const auto report = grad_check(net, x, labels);
  EXPECT_EQ(report.find("relu"), nullptr);
  EXPECT_TRUE(report.find("fc")->checked > 0);
}
