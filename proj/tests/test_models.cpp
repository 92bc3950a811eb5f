#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "cwkd/errors.hpp"
#include "cwkd/gradcheck.hpp"
#include "cwkd/metrics.hpp"
#include "cwkd/models.hpp"
#include "cwkd/rng.hpp"
#include "oracles.hpp"

using namespace cwkd;
namespace fs = std::filesystem;

namespace {

std::vector<double> bias_vec(const Tensor4& b) { return {b.vec().begin(), b.vec().end()}; }

double contract(const Tensor4& a, const Tensor4& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ToyNet randomized(std::uint64_t seed, std::size_t width, std::size_t classes) {
  ToyNet net = init_toynet(seed, width, classes);
  Rng rng(seed + 1000);
  for (std::size_t i : {1u, 3u, 5u}) {
    for (double& v : net.params[i].data()) v = rng.uniform(-0.2, 0.2);
  }
  return net;
}

fs::path temp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / ("cwkd_test_" + std::string(name));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("init: reproducible, seed-sensitive, scaled by fan-in") {
  CHECK(init_scale(27) == std::sqrt(1.0 / 27.0));
  const ToyNet a = init_toynet(5, 8, 4);
  const ToyNet b = init_toynet(5, 8, 4);
  const ToyNet c = init_toynet(6, 8, 4);
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) CHECK(a.params[i].vec() == b.params[i].vec());
  CHECK(a.params[0][0] != c.params[0][0]);

  CHECK(a.conv1_w().shape() == Shape4{8, 3, 3, 3});
  CHECK(a.conv2_w().shape() == Shape4{8, 8, 3, 3});
  CHECK(a.head_w().shape() == Shape4{4, 8, 1, 1});
  CHECK(a.head_b().shape() == Shape4{1, 4, 1, 1});
  CHECK(max_abs(a.conv1_w()) <= init_scale(27));
  CHECK(max_abs(a.conv2_w()) <= init_scale(72));
  CHECK(max_abs(a.head_w()) <= init_scale(8));
  CHECK(max_abs(a.conv1_b()) == 0.0);
  CHECK_THROWS_AS(init_toynet(1, 0, 4), ParameterError);
}

TEST_CASE("forward: zero weights give bias-only scores") {
  ToyNet net = zeros_like(init_toynet(1, 4, 3));
  net.params[5] = Tensor4(Shape4{1, 3, 1, 1}, std::vector<double>{0.5, -1.0, 2.0});
  Rng rng(2);
  const Tensor4 img = oracle::random_tensor(rng, Shape4{2, 3, 6, 5}, 0, 1);
  const TapPair taps = forward(net, img);
  CHECK(taps.feature.shape() == Shape4{2, 4, 6, 5});
  CHECK(taps.score.shape() == Shape4{2, 3, 6, 5});
  CHECK(max_abs(taps.feature) == 0.0);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 3; ++k)
      for (double v : taps.score.plane(n, k)) CHECK(v == net.head_b()[k]);
  CHECK_THROWS_AS(forward(net, Tensor4(Shape4{1, 2, 4, 4})), ShapeError);
}

TEST_CASE("forward: identity head reproduces the feature tap") {
  ToyNet net = randomized(3, 4, 4);
  net.params[4] = Tensor4(Shape4{4, 4, 1, 1});
  for (std::size_t c = 0; c < 4; ++c) net.params[4](c, c, 0, 0) = 1.0;
  net.params[5] = Tensor4(Shape4{1, 4, 1, 1});
  Rng rng(4);
  const TapPair taps = forward(net, oracle::random_tensor(rng, Shape4{1, 3, 5, 5}, 0, 1));
  CHECK(max_abs(taps.score - taps.feature) == 0.0);
}

TEST_CASE("forward: composed naive-loop convolutions") {
  const ToyNet net = randomized(7, 5, 4);
  Rng rng(8);
  const Tensor4 img = oracle::random_tensor(rng, Shape4{2, 3, 7, 6}, 0, 1);
  Tensor4 a = oracle::conv2d(img, net.conv1_w(), bias_vec(net.conv1_b()), 1, 1);
  for (double& v : a.data()) v = std::max(v, 0.0);
  Tensor4 f = oracle::conv2d(a, net.conv2_w(), bias_vec(net.conv2_b()), 1, 1);
  for (double& v : f.data()) v = std::max(v, 0.0);
  const Tensor4 s = oracle::conv2d(f, net.head_w(), bias_vec(net.head_b()), 1, 0);
  const TapPair taps = forward(net, img);
  CHECK(max_abs(taps.feature - f) <= 1e-12);
  CHECK(max_abs(taps.score - s) <= 1e-12);
}

TEST_CASE("backward: zero and doubled tap gradients") {
  const ToyNet net = randomized(9, 4, 3);
  Rng rng(10);
  const Tensor4 img = oracle::random_tensor(rng, Shape4{2, 3, 5, 5}, 0, 1);
  const ForwardTrace tr = forward_trace(net, img);
  const NetGrads zero = backward(net, tr, Tensor4(tr.taps.feature.shape()), Tensor4(tr.taps.score.shape()));
  for (const auto& g : zero) CHECK(max_abs(g) == 0.0);
  const NetGrads empty = backward(net, tr, Tensor4{}, Tensor4{});
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) {
    CHECK(empty[i].shape() == net.params[i].shape());
    CHECK(max_abs(empty[i]) == 0.0);
  }

  const Tensor4 gf = oracle::random_tensor(rng, tr.taps.feature.shape());
  const Tensor4 gs = oracle::random_tensor(rng, tr.taps.score.shape());
  const NetGrads one = backward(net, tr, gf, gs);
  const NetGrads two = backward(net, tr, 2.0 * gf, gs);
  const NetGrads feature_only = backward(net, tr, gf, Tensor4{});
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) {
    // two - one is exactly the feature-tap contribution.
    CHECK(max_abs((two[i] - one[i]) - feature_only[i]) <= 1e-12);
  }
  CHECK_THROWS_AS(backward(net, tr, Tensor4(Shape4{2, 5, 5, 5}), gs), ShapeError);
}

TEST_CASE("backward: finite differences on every parameter of a width-4 net") {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    const ToyNet net = randomized(20 + trial, 4, 3);
    const Tensor4 img = oracle::random_tensor(rng, Shape4{2, 3, 5, 4}, 0, 1);
    const ForwardTrace tr = forward_trace(net, img);
    const Tensor4 gf = oracle::random_tensor(rng, tr.taps.feature.shape());
    const Tensor4 gs = oracle::random_tensor(rng, tr.taps.score.shape());
    const NetGrads g = backward(net, tr, gf, gs);
    for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) {
      const Tensor4 num = finite_diff_grad(
          [&](const Tensor4& p) {
            ToyNet m = net;
            m.params[i] = p;
            const TapPair t = forward(m, img);
            return contract(t.feature, gf) + contract(t.score, gs);
          },
          net.params[i]);
      CHECK_MESSAGE(compare_gradients(g[i], num).max_rel_error < 1e-4, ToyNet::kParamNames[i]);
    }
  }
}

TEST_CASE("checkpoint: round trip and corruption") {
  const ToyNet net = randomized(12, 6, 4);
  const fs::path dir = temp_dir("ckpt");
  save_checkpoint(net, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  const ToyNet back = load_checkpoint(dir);
  CHECK(back.width == 6);
  CHECK(back.classes == 4);
  CHECK(back.seed == net.seed);
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) CHECK(back.params[i].vec() == net.params[i].vec());

  fs::remove(dir / "manifest.json");
  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("parameter counts: closed form, enumeration, teacher vs student") {
  // Width 1, one class: 27 + 1 + 9 + 1 + 1 + 1.
  CHECK(count_params(1, 1) == 40);
  for (std::size_t f : {1u, 4u, 8u, 32u}) {
    const ToyNet net = init_toynet(0, f, 4);
    std::size_t enumerated = 0;
    for (const auto& p : net.params) enumerated += p.size();
    CHECK(parameter_count(net) == enumerated);
    CHECK(count_params(net) == enumerated);
  }
  CHECK(count_params(32, 4) == 10276);
  CHECK(count_params(8, 4) == 844);
  CHECK(count_params(32, 4) > count_params(8, 4));
}
