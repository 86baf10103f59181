#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "choreoseg/error.hpp"
#include "choreoseg/nn/checkpoint.hpp"
#include "choreoseg/rng.hpp"
#include "choreoseg/segnet.hpp"
#include "gradient_suite.hpp"

using namespace choreoseg;
using namespace choreoseg::segnet;
using nn::Tensor;

namespace {

NetworkInput random_input(std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  NetworkInput in;
  in.frames = frames;
  in.bones = Tensor({frames, 134});
  in.slices = Tensor({frames, 405});
  for (double& x : in.bones.data()) x = rng.uniform(-0.5, 0.5);
  for (double& x : in.slices.data()) x = rng.uniform(0.0, 1.0);
  return in;
}

Tensor random_assembled(std::size_t channels, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({channels, frames});
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("audio block intermediate shapes") {
  const auto shapes = SegNet::audio_shape_trace();
  REQUIRE(shapes.size() == 3);
  CHECK(shapes[0] == nn::Shape{16, 3, 26});
  CHECK(shapes[1] == nn::Shape{16, 1, 8});
  CHECK(shapes[2] == nn::Shape{16, 1, 1});
}

TEST_CASE("stage output shapes") {
  SegNet net({}, 1);
  const auto in = random_input(12, 2);
  CHECK(net.visual_head(in.bones).shape() == nn::Shape{12, 67});
  CHECK(net.audio_block(in.slices).shape() == nn::Shape{12, 16});
  const Tensor x = SegNet::assemble_input(net.visual_head(in.bones), net.audio_block(in.slices));
  CHECK(x.shape() == nn::Shape{83, 12});
  CHECK(net.tcn_forward(x).shape() == nn::Shape{83, 12});
  const auto p = net.predict(in);
  CHECK(p.size() == 12);
  for (double v : p) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("assembled input stacks visual rows over audio rows") {
  Tensor v({2, 67}), a({2, 16});
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t c = 0; c < 67; ++c) v(t, c) = 100.0 * double(t) + double(c);
    for (std::size_t c = 0; c < 16; ++c) a(t, c) = -100.0 * double(t) - double(c) - 1.0;
  }
  const Tensor x = SegNet::assemble_input(v, a);
  CHECK(x(0, 1) == 100.0);
  CHECK(x(66, 0) == 66.0);
  CHECK(x(67, 0) == -1.0);
  CHECK(x(82, 1) == -116.0);
}

TEST_CASE("parameter inventory") {
  SegNet net;
  // visual 2 + audio 6 + 9 blocks x 2 convs x (v, g, bias) + head 2
  CHECK(net.params().size() == 2 + 6 + 54 + 2);
  CHECK(net.param("visual/weight").value.shape() == nn::Shape{67, 134});
  CHECK(net.param("audio/conv3/weight").value.shape() == nn::Shape{16, 16, 1, 8});
  CHECK(net.param("tcn/block8/conv2/v").value.shape() == nn::Shape{83, 5});
  CHECK(net.param("head/weight").value.shape() == nn::Shape{1, 83});
  CHECK_THROWS_AS(net.param("nope"), ConfigError);

  ModelConfig shared;
  shared.shared_tcn_kernels = true;
  SegNet s(shared);
  CHECK(s.param("tcn/block0/conv1/v").value.shape() == nn::Shape{1, 5});
}

TEST_CASE("weight-norm gains start at the row norms") {
  SegNet net({}, 4);
  const auto& v = net.param("tcn/block3/conv1/v").value;
  const auto& g = net.param("tcn/block3/conv1/g").value;
  for (std::size_t r = 0; r < 83; ++r) {
    double sq = 0.0;
    for (double x : v.row(r)) sq += x * x;
    CHECK(g[r] == doctest::Approx(std::sqrt(sq)));
  }
}

TEST_CASE("initialization is deterministic per seed") {
  SegNet a({}, 7), b({}, 7), c({}, 8);
  CHECK(a.param("visual/weight").value.vec() == b.param("visual/weight").value.vec());
  CHECK(a.param("visual/weight").value.vec() != c.param("visual/weight").value.vec());
}

TEST_CASE("zero residual branches make the TCN the identity") {
  SegNet net({}, 3);
  for (auto& p : net.params()) {
    if (p.name.starts_with("tcn/") && (p.name.ends_with("/g") || p.name.ends_with("/bias"))) {
      std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
    }
  }
  const Tensor x = random_assembled(83, 40, 5);
  CHECK(net.tcn_forward(x).vec() == x.vec());
}

TEST_CASE("zero head gives one half everywhere") {
  SegNet net({}, 3);
  auto& w = net.param("head/weight").value;
  std::fill(w.data().begin(), w.data().end(), 0.0);
  const auto p = net.predict(random_input(9, 1));
  for (double v : p) CHECK(v == 0.5);
}

TEST_CASE("depthwise TCN keeps rows independent") {
  SegNet net({}, 11);
  for (auto& p : net.params()) {
    if (p.name.ends_with("bias")) {
      Rng rng(1);
      for (double& x : p.value.data()) x = rng.uniform(-0.1, 0.1);
    }
  }
  const Tensor x = random_assembled(83, 64, 6);
  const Tensor y = net.tcn_forward(x);
  Tensor x2 = x;
  for (std::size_t t = 0; t < 64; ++t) x2(20, t) += 0.5;
  const Tensor y2 = net.tcn_forward(x2);
  for (std::size_t c = 0; c < 83; ++c) {
    bool same = true;
    for (std::size_t t = 0; t < 64; ++t) same = same && y(c, t) == y2(c, t);
    CHECK(same == (c != 20));
  }
}

TEST_CASE("frame-wise stages commute with frame permutations") {
  SegNet net({}, 5);
  const auto in = random_input(10, 9);
  std::vector<std::size_t> perm{3, 7, 0, 9, 1, 4, 8, 2, 6, 5};
  NetworkInput shuffled = in;
  for (std::size_t t = 0; t < 10; ++t) {
    std::copy(in.bones.row(perm[t]).begin(), in.bones.row(perm[t]).end(), shuffled.bones.row(t).begin());
    std::copy(in.slices.row(perm[t]).begin(), in.slices.row(perm[t]).end(), shuffled.slices.row(t).begin());
  }
  const Tensor v = net.visual_head(in.bones), vs = net.visual_head(shuffled.bones);
  const Tensor a = net.audio_block(in.slices), as = net.audio_block(shuffled.slices);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(std::equal(vs.row(t).begin(), vs.row(t).end(), v.row(perm[t]).begin()));
    CHECK(std::equal(as.row(t).begin(), as.row(t).end(), a.row(perm[t]).begin()));
  }
}

TEST_CASE("receptive field radius") {
  ModelConfig cfg;
  CHECK(cfg.receptive_radius() == 2044);
  cfg.layers = 3;
  cfg.kernel = 3;
  CHECK(cfg.receptive_radius() == 14);

  SegNet net(cfg, 2);
  const std::size_t T = 64, t0 = 30;
  const Tensor x = random_assembled(83, T, 1);
  const auto base = net.predict_from_assembled(x);
  Tensor bumped = x;
  for (std::size_t c = 0; c < 83; ++c) bumped(c, t0) += 1.0;
  const auto moved = net.predict_from_assembled(bumped);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t dist = t > t0 ? t - t0 : t0 - t;
    INFO("t=" << t);
    if (dist <= 14) {
      CHECK(base[t] != moved[t]);
    } else {
      CHECK(base[t] == moved[t]);
    }
  }
}

TEST_CASE("training forward without dropout equals inference") {
  ModelConfig cfg;
  cfg.dropout = 0.0;
  SegNet net(cfg, 1);
  const auto in = random_input(20, 3);
  Rng rng(0);
  CHECK(net.forward(in, true, &rng).probability == net.predict(in));
  CHECK(net.forward(in, false, nullptr).probability == net.predict(in));
}

TEST_CASE("dropout changes training outputs but not inference") {
  SegNet net({}, 1);
  const auto in = random_input(20, 3);
  Rng r1(1), r2(2), r1b(1);
  const auto a = net.forward(in, true, &r1).probability;
  const auto b = net.forward(in, true, &r2).probability;
  const auto c = net.forward(in, true, &r1b).probability;
  CHECK(a != b);
  CHECK(a == c);
  CHECK(net.predict(in) == net.predict(in));
}

TEST_CASE("network gradients on a short clip") {
  ModelConfig cfg;
  cfg.layers = 3;
  for (const auto& r : testing::network_gradient_check(12, 21, 3, cfg)) {
    INFO(r.name << ": " << r.report.summary());
    CHECK(r.report.passed);
  }
}

TEST_CASE("checkpoint round trip") {
  ModelConfig cfg;
  cfg.layers = 4;
  cfg.dropout = 0.2;
  SegNet net(cfg, 9);
  std::stringstream buf;
  nn::write_checkpoint(buf, net.to_checkpoint());
  const std::string bytes = buf.str();
  std::stringstream in(bytes);
  const SegNet back = SegNet::from_checkpoint(nn::read_checkpoint(in));
  CHECK(back.config().layers == 4);
  CHECK(back.config().dropout == 0.2);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& a = net.params()[i].value;
    const auto& b = back.params()[i].value;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == double(float(a[k])));
  }
  std::stringstream again;
  nn::write_checkpoint(again, back.to_checkpoint());
  CHECK(again.str() == bytes);

  nn::Checkpoint bare = net.to_checkpoint();
  bare.metadata.clear();
  CHECK_THROWS_AS(SegNet::from_checkpoint(bare), ParseError);
}

TEST_CASE("invalid configurations") {
  ModelConfig even;
  even.kernel = 4;
  CHECK_THROWS_AS(even.validate(), ConfigError);
  CHECK_THROWS_AS(SegNet(even, 0), ConfigError);
  ModelConfig none;
  none.layers = 0;
  CHECK_THROWS_AS(none.validate(), ConfigError);
  ModelConfig mismatch;
  mismatch.channels = 80;
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);
  ModelConfig drop;
  drop.dropout = 1.0;
  CHECK_THROWS_AS(drop.validate(), ConfigError);
}

TEST_CASE("config JSON round trip") {
  ModelConfig cfg;
  cfg.layers = 5;
  cfg.shared_tcn_kernels = true;
  const auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.layers == 5);
  CHECK(back.shared_tcn_kernels);
  CHECK(back.channels == 83);
}
