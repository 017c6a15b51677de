#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "lpnum/net.hpp"

using namespace lpnum;

namespace {

NetConfig tiny_fc(int in, std::vector<int> fc) {
  NetConfig c;
  c.in_c = 1;
  c.in_h = 1;
  c.in_w = in;
  c.conv_channels = {};
  c.fc_sizes = std::move(fc);
  c.dropout_keep = 1.0;
  return c;
}

}  // namespace

TEST_CASE("scheme presets pin the class formats") {
  auto n = [](const SchemeConfig& s, ParamClass c) {
    return class_format_name(s.at(c));
  };
  SchemeConfig fp32 = SchemeConfig::preset("fp32-baseline");
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(fp32.cls[c] == parse_class_format("wide"));

  SchemeConfig fx = SchemeConfig::preset("fixed12");
  CHECK(n(fx, ParamClass::Weights) == "fixed[0,12]");
  CHECK(n(fx, ParamClass::Biases) == "fixed[0,12]");
  CHECK(n(fx, ParamClass::Outputs) == "fixed[6,6]");
  CHECK(n(fx, ParamClass::Gradients) == "fixed[0,12]");
  CHECK(n(fx, ParamClass::WeightUpdates) == "fixed[0,12]");
  CHECK(n(fx, ParamClass::BiasUpdates) == "fixed[0,12]");

  SchemeConfig sf = SchemeConfig::preset("scaled-fixed12");
  CHECK(n(sf, ParamClass::Weights) == "fixed[0,12]*2^-4");
  CHECK(n(sf, ParamClass::Outputs) == "fixed[6,6]*2^-4");

  SchemeConfig fl = SchemeConfig::preset("float12");
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(class_format_name(fl.cls[c]) == "float[5,6]");

  SchemeConfig cf = SchemeConfig::preset("ctx-fixed12");
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(class_format_name(cf.cls[c]) == "ctx-fixed[6,6]");

  SchemeConfig cl = SchemeConfig::preset("ctx-float12");
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(class_format_name(cl.cls[c]) == "ctx-float[4,7]");

  SchemeConfig pot = SchemeConfig::preset("pot");
  CHECK(n(pot, ParamClass::Weights) == "fixed[0,12]");
  CHECK(n(pot, ParamClass::Outputs) == "pot[6]");
  CHECK(n(pot, ParamClass::Gradients) == "pot[6]");
  CHECK(n(pot, ParamClass::WeightUpdates) == "fixed[0,12]");

  CHECK(SchemeConfig::preset_names().size() == 7);
  CHECK_THROWS_AS(SchemeConfig::preset("nope"), std::invalid_argument);
}

TEST_CASE("reference topology geometry") {
  Network net(NetConfig{}, SchemeConfig::preset("fp32-baseline"), 1);
  CHECK(net.layer_count() == 6);
  CHECK(net.layer_name(0) == "input");
  CHECK(net.layer_name(3) == "conv3");
  CHECK(net.layer_name(5) == "fc2");
  const auto& conv = net.conv_layers();
  REQUIRE(conv.size() == 3);
  CHECK(conv[0].out_h == 32);
  CHECK(conv[0].ph == 16);  // ceil((32-3)/2)+1
  CHECK(conv[1].ph == 8);
  CHECK(conv[2].ph == 4);
  CHECK(conv[0].kv() == 75);
  CHECK(conv[1].kv() == 800);
  CHECK(conv[2].kv() == 800);
  const auto& fc = net.fc_layers();
  REQUIRE(fc.size() == 2);
  CHECK(fc[0].n_in == 64 * 4 * 4);
  CHECK(fc[0].n_out == 1000);
  CHECK(fc[1].n_out == 10);

  int64_t params = 0;
  for (const auto& l : conv) params += l.W.numel() + l.B.numel();
  for (const auto& f : fc) params += f.W.numel() + f.B.numel();
  CHECK(params == 1114338);
}

TEST_CASE("constructor rejects unusable configurations") {
  NetConfig c;
  c.fc_sizes = {};
  CHECK_THROWS_AS(Network(c, SchemeConfig::preset("fp32-baseline"), 1),
                  std::invalid_argument);
  NetConfig d;
  d.dropout_keep = 0.0;
  CHECK_THROWS_AS(Network(d, SchemeConfig::preset("fp32-baseline"), 1),
                  std::invalid_argument);
  NetConfig e;
  e.conv_stride = 2;
  CHECK_THROWS_AS(Network(e, SchemeConfig::preset("fp32-baseline"), 1),
                  std::invalid_argument);
}

TEST_CASE("identity conv kernel exposes pooling semantics") {
  NetConfig cfg;
  cfg.in_c = 1;
  cfg.in_h = 6;
  cfg.in_w = 6;
  cfg.conv_channels = {1};
  cfg.fc_sizes = {2};
  cfg.dropout_keep = 1.0;
  Network net(cfg, SchemeConfig::preset("fp32-baseline"), 1);
  auto& l = net.conv_layers()[0];
  REQUIRE(l.W.numel() == 25);
  l.W.data[12] = 1.0;  // 5x5 center tap: convolution is the identity

  std::vector<double> img(36);
  for (int i = 0; i < 36; ++i) img[i] = i * 0.01;
  BatchCache c = net.forward(img.data(), 1, true, Rounding::Nearest, 0,
                             nullptr);

  // 3x3 windows, stride 2, ceil mode: the last window in each axis is
  // clipped to two rows/columns. Increasing input makes every window's max
  // its bottom-right corner.
  CHECK(l.ph == 3);
  std::vector<double> expect = {0.14, 0.16, 0.17, 0.26, 0.28,
                                0.29, 0.32, 0.34, 0.35};
  REQUIRE(c.conv_out[0].numel() == 9);
  for (int i = 0; i < 9; ++i)
    CHECK(c.conv_out[0].data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  std::vector<int32_t> arg = {14, 16, 17, 26, 28, 29, 32, 34, 35};
  CHECK(c.pool_arg[0] == arg);
}

TEST_CASE("softmax cross entropy against hand values") {
  Tensor logits({2, 2});
  logits.data = {0.0, 0.0, 1.0, 0.0};
  int labels[2] = {0, 1};
  Tensor dl;
  double loss = Network::softmax_xent(logits, labels, &dl);
  double p1 = 1.0 / (1.0 + std::exp(-1.0));  // row 1: softmax of (1, 0)
  CHECK(loss == doctest::Approx(0.5 * (std::log(2.0) - std::log(1.0 - p1))));
  CHECK(dl.data[0] == doctest::Approx((0.5 - 1.0) / 2.0));
  CHECK(dl.data[1] == doctest::Approx(0.5 / 2.0));
  CHECK(dl.data[2] == doctest::Approx(p1 / 2.0));
  CHECK(dl.data[3] == doctest::Approx((1.0 - p1 - 1.0) / 2.0));

  int bad[2] = {0, 7};
  CHECK_THROWS_AS(Network::softmax_xent(logits, bad, nullptr),
                  std::invalid_argument);
}

TEST_CASE("dropout scales activations at inference time") {
  NetConfig cfg = tiny_fc(3, {3, 2});
  cfg.dropout_keep = 0.6;
  Network net(cfg, SchemeConfig::preset("fp32-baseline"), 1);
  auto& f1 = net.fc_layers()[0];
  for (int i = 0; i < 3; ++i) f1.W.data[i * 3 + i] = 1.0;
  auto& f2 = net.fc_layers()[1];
  f2.W.data[0] = 1.0;  // row 0 reads unit 0
  f2.W.data[3 + 1] = 1.0;  // row 1 reads unit 1

  std::vector<double> img = {0.5, 0.25, 0.125};
  BatchCache c = net.forward(img.data(), 1, false, Rounding::Nearest, 0,
                             nullptr);
  CHECK(c.logits.data[0] == doctest::Approx(0.5 * 0.6));
  CHECK(c.logits.data[1] == doctest::Approx(0.25 * 0.6));

  BatchCache t = net.forward(img.data(), 1, true, Rounding::Nearest, 0,
                             nullptr);
  REQUIRE(t.drop_mask[0].size() == 3);
  for (int i = 0; i < 3; ++i) {
    double kept = t.drop_mask[0][i] ? img[i] : 0.0;
    CHECK(t.fc_out[0].data[i] == kept);
  }
}

TEST_CASE("sgd update arithmetic and momentum buffers") {
  NetConfig cfg = tiny_fc(2, {2});
  Network net(cfg, SchemeConfig::preset("fp32-baseline"), 1);
  auto& f = net.fc_layers()[0];
  f.W.data = {0.5, -0.25, 0.0, 0.0};

  Gradients g;
  g.fc_wg.emplace_back(std::vector<int64_t>{2, 2});
  g.fc_wg[0].data = {0.1, -0.2, 0.0, 0.0};
  g.fc_bg.emplace_back(std::vector<int64_t>{2});
  g.fc_bg[0].data = {0.04, 0.0};

  TrainHyper hp;  // lr 0.001, momentum 0.9, weight decay 0.004
  std::vector<PhaseTally> tallies;
  net.sgd_step(g, hp, Rounding::Nearest, 0, &tallies);

  CHECK(f.uW.data[0] == doctest::Approx(-0.001 * (0.1 + 0.004 * 0.5)));
  CHECK(f.W.data[0] == doctest::Approx(0.5 - 0.001 * (0.1 + 0.004 * 0.5)));
  CHECK(f.uW.data[1] == doctest::Approx(-0.001 * (-0.2 + 0.004 * -0.25)));
  CHECK(f.W.data[1] == doctest::Approx(-0.25 + 0.001 * 0.201));
  CHECK(f.uB.data[0] == doctest::Approx(-4e-5));
  CHECK(f.B.data[0] == doctest::Approx(-4e-5));
  CHECK(tallies[1].update.mul == 3 * 6);
  CHECK(tallies[1].update.add == 3 * 6);

  // Momentum carries into the next step.
  Gradients zero;
  zero.fc_wg.emplace_back(std::vector<int64_t>{2, 2});
  zero.fc_bg.emplace_back(std::vector<int64_t>{2});
  double u0 = f.uW.data[0];
  double w0 = f.W.data[0];
  net.sgd_step(zero, hp, Rounding::Nearest, 1, nullptr);
  CHECK(f.uW.data[0] ==
        doctest::Approx(0.9 * u0 - 0.001 * 0.004 * w0));
}

TEST_CASE("stored tensors stay on their grids") {
  NetConfig cfg;
  cfg.in_c = 2;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.conv_channels = {3};
  cfg.fc_sizes = {6, 4};
  Network net(cfg, SchemeConfig::preset("fixed12"), 7);
  net.init_params();
  std::string what;
  CHECK(net.check_conformance(&what));

  net.conv_layers()[0].W.data[0] = 0.3;  // off the fixed[0,12] grid
  CHECK_FALSE(net.check_conformance(&what));
  CHECK(what == "conv1/weights");
}

TEST_CASE("forward and backward are reproducible") {
  NetConfig cfg;
  cfg.in_c = 2;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.conv_channels = {3};
  cfg.fc_sizes = {6, 4};
  Network a(cfg, SchemeConfig::preset("float12"), 3);
  Network b(cfg, SchemeConfig::preset("float12"), 3);
  a.init_params();
  b.init_params();

  std::vector<double> img(2 * 8 * 8 * 2);
  for (size_t i = 0; i < img.size(); ++i) img[i] = 0.01 * (double)(i % 97);
  int labels[2] = {1, 3};

  BatchCache ca = a.forward(img.data(), 2, true, Rounding::Stochastic, 5,
                            nullptr);
  BatchCache cb = b.forward(img.data(), 2, true, Rounding::Stochastic, 5,
                            nullptr);
  REQUIRE(ca.logits.numel() == cb.logits.numel());
  CHECK(std::memcmp(ca.logits.data.data(), cb.logits.data.data(),
                    sizeof(double) * (size_t)ca.logits.numel()) == 0);

  Gradients ga = a.backward(ca, labels, Rounding::Stochastic, 5, nullptr);
  Gradients gb = b.backward(cb, labels, Rounding::Stochastic, 5, nullptr);
  CHECK(std::memcmp(ga.conv_wg[0].data.data(), gb.conv_wg[0].data.data(),
                    sizeof(double) * (size_t)ga.conv_wg[0].numel()) == 0);

  // A different iteration draws different stochastic streams.
  BatchCache cc = a.forward(img.data(), 2, true, Rounding::Stochastic, 6,
                            nullptr);
  CHECK(std::memcmp(ca.logits.data.data(), cc.logits.data.data(),
                    sizeof(double) * (size_t)ca.logits.numel()) != 0);
}

TEST_CASE("multiply and shift kernels agree bit for bit on pot schemes") {
  NetConfig cfg;
  cfg.in_c = 3;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.conv_channels = {4};
  cfg.fc_sizes = {10, 5};
  Network m(cfg, SchemeConfig::preset("pot"), 11, KernelMode::Multiply);
  Network s(cfg, SchemeConfig::preset("pot"), 11, KernelMode::Shift);
  m.init_params();
  s.init_params();

  std::vector<double> img(3 * 8 * 8 * 3);
  for (size_t i = 0; i < img.size(); ++i)
    img[i] = 0.004 * (double)(i % 211) - 0.3;
  int labels[3] = {0, 2, 4};

  BatchCache cm = m.forward(img.data(), 3, true, Rounding::Stochastic, 2,
                            nullptr);
  BatchCache cs = s.forward(img.data(), 3, true, Rounding::Stochastic, 2,
                            nullptr);
  CHECK(std::memcmp(cm.logits.data.data(), cs.logits.data.data(),
                    sizeof(double) * (size_t)cm.logits.numel()) == 0);

  Gradients gm = m.backward(cm, labels, Rounding::Stochastic, 2, nullptr);
  Gradients gs = s.backward(cs, labels, Rounding::Stochastic, 2, nullptr);
  for (size_t i = 0; i < gm.conv_wg.size(); ++i)
    CHECK(std::memcmp(gm.conv_wg[i].data.data(), gs.conv_wg[i].data.data(),
                      sizeof(double) * (size_t)gm.conv_wg[i].numel()) == 0);
  for (size_t i = 0; i < gm.fc_wg.size(); ++i)
    CHECK(std::memcmp(gm.fc_wg[i].data.data(), gs.fc_wg[i].data.data(),
                      sizeof(double) * (size_t)gm.fc_wg[i].numel()) == 0);

  TrainHyper hp;
  m.sgd_step(gm, hp, Rounding::Stochastic, 2, nullptr);
  s.sgd_step(gs, hp, Rounding::Stochastic, 2, nullptr);
  for (size_t i = 0; i < m.fc_layers().size(); ++i)
    CHECK(std::memcmp(m.fc_layers()[i].W.data.data(),
                      s.fc_layers()[i].W.data.data(),
                      sizeof(double) * (size_t)m.fc_layers()[i].W.numel()) ==
          0);
}

TEST_CASE("shift kernel mode refuses non-pot operand formats") {
  NetConfig cfg = tiny_fc(2, {2});
  Network net(cfg, SchemeConfig::preset("fixed12"), 1, KernelMode::Shift);
  net.init_params();
  std::vector<double> img = {0.1, 0.2};
  CHECK_THROWS_AS(
      net.forward(img.data(), 1, true, Rounding::Nearest, 0, nullptr),
      std::runtime_error);
}

TEST_CASE("context liveness per layer and class") {
  Network net(NetConfig{}, SchemeConfig::preset("ctx-fixed12"), 1);
  CHECK(net.context_exists(0, ParamClass::Outputs));
  CHECK_FALSE(net.context_exists(0, ParamClass::Weights));
  CHECK(net.context_exists(2, ParamClass::Weights));
  CHECK(net.context_exists(2, ParamClass::Gradients));
  CHECK_FALSE(net.context_exists(5, ParamClass::Outputs));  // logits stay wide
  CHECK(net.context_exists(5, ParamClass::Weights));

  Network plain(NetConfig{}, SchemeConfig::preset("fixed12"), 1);
  CHECK_FALSE(plain.context_exists(2, ParamClass::Weights));
  CHECK(plain.context_states().empty());
}

TEST_CASE("weight init contexts land near the init scale") {
  NetConfig cfg;
  cfg.in_c = 3;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.conv_channels = {8};
  cfg.fc_sizes = {16, 4};
  Network net(cfg, SchemeConfig::preset("ctx-fixed12"), 5);
  net.init_params();
  // std 0.01 puts the mean log2 magnitude near log2(0.01) ~ -6.6 plus the
  // half-normal correction; scales land well below zero.
  int ws = net.context_scale(1, ParamClass::Weights);
  CHECK(ws <= -5);
  CHECK(ws >= -10);
  std::string what;
  CHECK(net.check_conformance(&what));
}
