#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "cwkd/errors.hpp"
#include "cwkd/gradcheck.hpp"
#include "cwkd/losses.hpp"
#include "cwkd/rng.hpp"
#include "oracles.hpp"

using namespace cwkd;

namespace {

LabelMap random_labels(Rng& rng, std::size_t n, std::size_t h, std::size_t w, std::size_t classes,
                       double ignore_rate = 0.1) {
  LabelMap l(n, h, w);
  for (auto& v : l.data()) {
    v = rng.uniform() < ignore_rate ? LabelMap::kIgnore
                                    : static_cast<LabelMap::value_type>(rng.below(classes));
  }
  return l;
}

LossSpec spec_for(LossKind kind, double temperature = 1.0) {
  LossSpec s;
  s.kind = kind;
  s.temperature = temperature;
  s.p = 2.0;
  return s;
}

double entropy(std::span<const double> p) {
  double h = 0;
  for (double v : p) if (v > 0) h -= v * std::log(v);
  return h;
}

Tensor4 permute_channels(const Tensor4& x, const std::vector<std::size_t>& perm) {
  Tensor4 out(x.shape());
  for (std::size_t n = 0; n < x.shape().n; ++n)
    for (std::size_t c = 0; c < x.shape().c; ++c) {
      const auto src = x.plane(n, perm[c]);
      std::copy(src.begin(), src.end(), out.plane(n, c).begin());
    }
  return out;
}

double worst_fd_error(const LossSpec& spec, const Tensor4& t, const Tensor4& s, const LabelMap* labels) {
  const LossResult r = evaluate_loss(spec, t, s, labels);
  const Tensor4 num =
      finite_diff_grad([&](const Tensor4& x) { return evaluate_loss(spec, t, x, labels).value; }, s);
  return compare_gradients(r.grad_student, num).max_rel_error;
}

}  // namespace

TEST_CASE("loss kinds: names round-trip and the adversarial term is rejected") {
  for (LossKind k : kAllLossKinds) CHECK(parse_loss_kind(to_string(k)) == k);
  CHECK(parse_loss_kind("CW_BHATTACHARYYA") == LossKind::CwBhattacharyya);
  CHECK_THROWS_AS(parse_loss_kind("HO"), UnsupportedError);
  CHECK_THROWS_AS(parse_loss_kind("nope"), ParameterError);
  CHECK(parse_target("feature") == Target::Feature);
  CHECK_THROWS_AS(parse_target("logits"), ParameterError);

  LossSpec bad;
  bad.alpha = -1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad.alpha = 1;
  bad.temperature = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad.temperature = 1;
  bad.kind = LossKind::AttentionTransfer;
  bad.p = 0.5;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("channelwise_kl: two-position closed form") {
  const Tensor4 t(Shape4{1, 1, 1, 2}, std::vector<double>{0.0, std::log(3.0)});
  const Tensor4 s(Shape4{1, 1, 1, 2}, std::vector<double>{0.0, 0.0});
  const double expect = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  const LossResult r = channelwise_kl(t, s, 1.0);
  CHECK(std::abs(r.value - expect) < 1e-15);
  CHECK(std::abs(r.value - oracle::channelwise_kl(t, s, 1.0)) < 1e-15);
  // (pS - pT) / T
  CHECK(std::abs(r.grad_student[0] - 0.25) < 1e-15);
  CHECK(std::abs(r.grad_student[1] + 0.25) < 1e-15);
}

TEST_CASE("channelwise_kl: gradient has no temperature-squared factor") {
  Rng rng(21);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{1, 2, 2, 3});
  const Tensor4 s = oracle::random_tensor(rng, Shape4{1, 2, 2, 3});
  const double T = 4.0;
  const LossResult r = channelwise_kl(t, s, T, Reduction::Sum);
  const Tensor4 pt = softmax_over_axis(t, Axis::Spatial, T);
  const Tensor4 ps = softmax_over_axis(s, Axis::Spatial, T);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(std::abs(r.grad_student[i] - (ps[i] - pt[i]) / T) < 1e-15);
  }
}

TEST_CASE("channelwise losses: reductions differ by n*c") {
  Rng rng(22);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 3, 3, 4});
  const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 3, 3, 4});
  for (auto fn : {&channelwise_kl, &channelwise_bhattacharyya, &channelwise_l2}) {
    const LossResult mean = fn(t, s, 0.8, Reduction::Mean);
    const LossResult sum = fn(t, s, 0.8, Reduction::Sum);
    CHECK(sum.value == doctest::Approx(6.0 * mean.value).epsilon(1e-13));
    CHECK(max_abs(sum.grad_student - 6.0 * mean.grad_student) < 1e-14);
  }
}

TEST_CASE("channelwise losses: agree with 50-digit evaluation") {
  Rng rng(23);
  for (double T : {0.5, 1.0, 3.0}) {
    const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 3, 3, 3}, -2, 2);
    const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 3, 3, 3}, -2, 2);
    CHECK(std::abs(channelwise_kl(t, s, T).value - oracle::channelwise_kl(t, s, T)) < 1e-10);
    CHECK(std::abs(channelwise_bhattacharyya(t, s, T).value - oracle::channelwise_bhattacharyya(t, s, T)) < 1e-10);
    CHECK(std::abs(channelwise_l2(t, s, T).value - oracle::channelwise_l2(t, s, T)) < 1e-10);
    CHECK(std::abs(pixelwise_kl(t, s, T).value - oracle::pixelwise_kl(t, s, T)) < 1e-10);
  }
}

TEST_CASE("channelwise losses: symmetry of Bhattacharyya and L2") {
  Rng rng(24);
  const Tensor4 a = oracle::random_tensor(rng, Shape4{2, 2, 3, 3}, -3, 3);
  const Tensor4 b = oracle::random_tensor(rng, Shape4{2, 2, 3, 3}, -3, 3);
  CHECK(std::abs(channelwise_bhattacharyya(a, b, 1.0).value - channelwise_bhattacharyya(b, a, 1.0).value) < 1e-14);
  CHECK(std::abs(channelwise_l2(a, b, 1.0).value - channelwise_l2(b, a, 1.0).value) < 1e-14);
}

TEST_CASE("channelwise losses: argument validation") {
  const Tensor4 a(Shape4{1, 2, 3, 3});
  const Tensor4 b(Shape4{1, 3, 3, 3});
  CHECK_THROWS_AS(channelwise_kl(a, b, 1.0), ShapeError);
  CHECK_THROWS_AS(channelwise_kl(a, a, 0.0), ParameterError);
  CHECK_THROWS_AS(channelwise_bhattacharyya(a, a, -1.0), ParameterError);
  CHECK_THROWS_AS(channelwise_l2(a, b, 1.0), ShapeError);
  CHECK_THROWS_AS(pixelwise_kl(a, a, 0.0), ParameterError);
}

TEST_CASE("channel_distribution: rows are distributions") {
  Rng rng(25);
  const Tensor4 x = oracle::random_tensor(rng, Shape4{2, 3, 4, 5}, -100, 100);
  const ChannelDistribution d = channel_distribution(x, 0.1);
  CHECK(d.rows() == 6);
  CHECK(d.positions() == 20);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      const auto row = d.row(n, c);
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-12);
      for (double v : row) CHECK(v >= 0.0);
    }
}

TEST_CASE("mimic_l2: hand sum") {
  const Tensor4 t(Shape4{1, 2, 1, 1});
  const Tensor4 s(Shape4{1, 2, 1, 1}, 1.0);
  const LossResult r = mimic_l2(t, s);
  CHECK(r.value == 2.0);
  CHECK(r.grad_student.vec() == Buffer{2.0, 2.0});
}

TEST_CASE("attention_transfer: scale removed by normalization, zero map reported") {
  Rng rng(26);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 3, 4, 4});
  CHECK(attention_transfer(t, t, 2.0).value <= 1e-12);
  CHECK(attention_transfer(t, 3.7 * t, 2.0).value <= 1e-12);
  CHECK(attention_transfer(t, 3.7 * t, 3.0).value <= 1e-12);
  const Tensor4 zero(t.shape());
  CHECK_THROWS_AS(attention_transfer(t, zero, 2.0), NormalizationError);
  CHECK_THROWS_AS(attention_transfer(zero, t, 2.0), NormalizationError);
  CHECK_THROWS_AS(attention_transfer(t, t, 0.5), ParameterError);
}

TEST_CASE("pixelwise_kl: uniform teacher reduces to cross-entropy minus ln C") {
  Rng rng(27);
  const Tensor4 t(Shape4{2, 4, 3, 3}, 0.3);
  const Tensor4 s = oracle::random_tensor(rng, t.shape(), -2, 2);
  const Tensor4 log_ps = log_softmax_over_axis(s, Axis::Channel, 1.0);
  double ce = 0;
  for (double v : log_ps.data()) ce -= v / 4.0;
  ce /= 18.0;
  CHECK(std::abs(pixelwise_kl(t, s, 1.0).value - (ce - std::log(4.0))) < 1e-13);
}

TEST_CASE("local_similarity: hand enumeration and constant maps") {
  const Tensor4 t(Shape4{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor4 s(Shape4{1, 1, 2, 2});
  // Neighbour-distance sums with zero padding are 11, 14, 19, 26; the zero map gives 0.
  const LossResult r = local_similarity(t, s);
  CHECK(r.value == doctest::Approx((121.0 + 196.0 + 361.0 + 676.0) / 4.0).epsilon(1e-15));
  CHECK(std::abs(r.value - oracle::local_similarity(t, s)) < 1e-12);

  // A constant map has zero distance between in-image neighbours, so two
  // constant maps with equal norm only differ through the padded border,
  // where the distance is the same for both.
  Tensor4 a(Shape4{1, 2, 5, 5});
  Tensor4 b(Shape4{1, 2, 5, 5});
  for (std::size_t i = 0; i < 25; ++i) {
    a[i] = 3.0;
    a[25 + i] = 4.0;
    b[i] = 5.0;
  }
  CHECK(local_similarity(a, b).value <= 1e-12);
  CHECK(local_similarity(Tensor4(a.shape()), Tensor4(a.shape())).value == 0.0);
}

TEST_CASE("local_similarity, pairwise_affinity, ifvd: loop oracles") {
  Rng rng(28);
  for (int trial = 0; trial < 5; ++trial) {
    const Shape4 sh{1 + rng.below(2), 1 + rng.below(4), 2 + rng.below(4), 2 + rng.below(4)};
    const Tensor4 t = oracle::random_tensor(rng, sh);
    const Tensor4 s = oracle::random_tensor(rng, sh);
    const LabelMap l = random_labels(rng, sh.n, sh.h, sh.w, 2, 0.2);
    CHECK(std::abs(local_similarity(t, s).value - oracle::local_similarity(t, s)) < 1e-10);
    CHECK(std::abs(pairwise_affinity(t, s).value - oracle::pairwise_affinity(t, s)) < 1e-10);
    CHECK(std::abs(ifvd(t, s, l).value - oracle::ifvd(t, s, l)) < 1e-10);
  }
  const Tensor4 t = oracle::random_tensor(rng, Shape4{1, 3, 2, 2});
  const Tensor4 s = oracle::random_tensor(rng, Shape4{1, 3, 2, 2});
  LabelMap two(1, 2, 2, 0);
  two(0, 1, 0) = two(0, 1, 1) = 1;
  CHECK(std::abs(pairwise_affinity(t, s).value - oracle::pairwise_affinity(t, s)) < 1e-12);
  CHECK(std::abs(ifvd(t, s, two).value - oracle::ifvd(t, s, two)) < 1e-12);
}

TEST_CASE("pairwise_affinity: per-pixel rescaling and zero vectors") {
  Rng rng(29);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 3, 3, 4});
  Tensor4 scaled = t;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const double k = rng.uniform(0.1, 10.0);
        for (std::size_t c = 0; c < 3; ++c) scaled(n, c, y, x) *= k;
      }
  CHECK(pairwise_affinity(t, scaled).value <= 1e-12);

  const Tensor4 s = oracle::random_tensor(rng, t.shape());
  const double base = pairwise_affinity(t, s).value;
  Tensor4 t2 = t, s2 = s;
  for (std::size_t c = 0; c < 3; ++c) {
    t2(1, c, 2, 1) *= 7.5;
    s2(1, c, 2, 1) *= 7.5;
  }
  CHECK(std::abs(pairwise_affinity(t2, s2).value - base) <= 1e-10);

  Tensor4 dead = s;
  for (std::size_t c = 0; c < 3; ++c) dead(0, c, 0, 0) = 0.0;
  const LossResult r = pairwise_affinity(t, dead);
  CHECK(std::isfinite(r.value));
  CHECK(all_finite(r.grad_student));
  CHECK(std::abs(r.value - oracle::pairwise_affinity(t, dead)) < 1e-12);
}

TEST_CASE("ifvd: self-cosine, ignore handling") {
  const Tensor4 constant(Shape4{1, 3, 3, 3}, 0.7);
  Rng rng(30);
  const Tensor4 s = oracle::random_tensor(rng, constant.shape(), 0.5, 1.0);
  LabelMap one(1, 3, 3, 2);
  // Constant features against their own prototype have cosine 1 for both networks.
  CHECK(ifvd(constant, Tensor4(constant.shape(), 2.0), one).value <= 1e-12);
  CHECK(ifvd(s, s, one).value == 0.0);

  LabelMap none(1, 3, 3, LabelMap::kIgnore);
  const LossResult r = ifvd(constant, s, none);
  CHECK(r.value == 0.0);
  CHECK(max_abs(r.grad_student) == 0.0);
  CHECK_THROWS_AS(ifvd(constant, s, LabelMap(1, 2, 3)), ShapeError);
}

TEST_CASE("cross_entropy: uniform logits and empty label set") {
  const Tensor4 logits(Shape4{2, 4, 3, 3}, 1.25);
  LabelMap l(2, 3, 3, 1);
  l(0, 0, 0) = 3;
  CHECK(std::abs(cross_entropy(logits, l).value - std::log(4.0)) < 1e-14);
  const LabelMap none(2, 3, 3, LabelMap::kIgnore);
  const LossResult r = cross_entropy(logits, none);
  CHECK(r.value == 0.0);
  CHECK(max_abs(r.grad_student) == 0.0);
  LabelMap bad(2, 3, 3, 4);
  CHECK_THROWS(cross_entropy(logits, bad));
}

TEST_CASE("aligner: pass-through, identity and gradients") {
  Rng rng(31);
  const Tensor4 x = oracle::random_tensor(rng, Shape4{2, 3, 4, 4});
  CHECK(max_abs(align_channels(x, nullptr) - x) == 0.0);
  const Aligner eye = Aligner::identity(3);
  CHECK(max_abs(align_channels(x, &eye) - x) == 0.0);

  Aligner a = Aligner::random(rng, 3, 5);
  for (double& v : a.bias.data()) v = rng.uniform(-1, 1);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 5, 4, 4});
  auto loss = [&](const Aligner& al, const Tensor4& in) {
    return channelwise_kl(t, align_channels(in, &al), 1.0).value;
  };
  const Tensor4 y = align_channels(x, &a);
  CHECK(y.shape() == Shape4{2, 5, 4, 4});
  const AlignerGrads g = align_channels_backward(x, a, channelwise_kl(t, y, 1.0).grad_student);

  const Tensor4 nx = finite_diff_grad([&](const Tensor4& v) { return loss(a, v); }, x);
  const Tensor4 nw = finite_diff_grad([&](const Tensor4& v) { Aligner b = a; b.weight = v; return loss(b, x); }, a.weight);
  const Tensor4 nb = finite_diff_grad([&](const Tensor4& v) { Aligner b = a; b.bias = v; return loss(b, x); }, a.bias);
  CHECK(compare_gradients(g.grad_x, nx).max_rel_error < 1e-6);
  CHECK(compare_gradients(g.grad_weight, nw).max_rel_error < 1e-6);
  // Softmax over space is invariant to a per-channel constant, so the bias
  // gradient is zero up to round-off.
  CHECK(max_abs(g.grad_bias) < 1e-12);
  CHECK(max_abs(nb) < 1e-8);
}

TEST_CASE("combine: weighted sums") {
  Rng rng(32);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 4, 3, 3});
  const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 4, 3, 3});
  const LabelMap l = random_labels(rng, 2, 3, 3, 4);
  LossSpec ce = spec_for(LossKind::CrossEntropy);
  LossSpec cw = spec_for(LossKind::CwKl);
  const LossResult ce_r = evaluate_loss(ce, t, s, &l);
  const LossResult cw_r = evaluate_loss(cw, t, s, &l);

  const std::vector<WeightedTerm> single{{ce, ce_r}};
  const LossResult one = combine(single);
  CHECK(one.value == ce_r.value);
  CHECK(max_abs(one.grad_student - ce_r.grad_student) == 0.0);

  cw.alpha = 0.0;
  const std::vector<WeightedTerm> zero{{ce, ce_r}, {cw, cw_r}};
  CHECK(combine(zero).value == ce_r.value);
  CHECK(max_abs(combine(zero).grad_student - ce_r.grad_student) == 0.0);

  cw.alpha = 35.0;
  const std::vector<WeightedTerm> both{{ce, ce_r}, {cw, cw_r}};
  const LossResult c = combine(both);
  CHECK(std::abs(c.value - (ce_r.value + 35.0 * cw_r.value)) <= 1e-12);
  CHECK(max_abs(c.grad_student - (ce_r.grad_student + 35.0 * cw_r.grad_student)) <= 1e-12);

  const std::vector<WeightedTerm> mixed{{ce, ce_r}, {cw, channelwise_kl(t, t, 1.0)}};
  CHECK_NOTHROW(combine(mixed));
  const std::vector<WeightedTerm> bad{{ce, ce_r}, {cw, channelwise_kl(Tensor4(Shape4{1, 1, 2, 2}), Tensor4(Shape4{1, 1, 2, 2}), 1.0)}};
  CHECK_THROWS_AS(combine(bad), ShapeError);
  CHECK(combine(std::span<const WeightedTerm>{}).value == 0.0);
}

TEST_CASE("invariant: nonnegativity on random and extreme inputs") {
  Rng rng(40);
  for (int trial = 0; trial < 20; ++trial) {
    const double mag = trial % 4 == 3 ? 50.0 : 2.0;
    const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 3, 4, 4}, -mag, mag);
    const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 3, 4, 4}, -mag, mag);
    const LabelMap l = random_labels(rng, 2, 4, 4, 3);
    for (LossKind k : kAllLossKinds) {
      const LossResult r = evaluate_loss(spec_for(k, trial % 2 ? 0.3 : 4.0), t, s, &l);
      CHECK_MESSAGE(r.value >= -1e-12, to_string(k));
      CHECK_MESSAGE(std::isfinite(r.value), to_string(k));
      CHECK_MESSAGE(all_finite(r.grad_student), to_string(k));
      CHECK(r.grad_student.shape() == s.shape());
    }
  }
}

TEST_CASE("invariant: zero at identity") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 4, 5, 6}, -3, 3);
    const LabelMap l = random_labels(rng, 2, 5, 6, 4);
    for (LossKind k : kAllLossKinds) {
      if (k == LossKind::CrossEntropy) continue;
      for (double T : {0.1, 1.0, 10.0}) {
        const LossResult r = evaluate_loss(spec_for(k, T), t, t, &l);
        CHECK_MESSAGE(r.value <= 1e-12, to_string(k));
        CHECK_MESSAGE(max_abs(r.grad_student) <= 1e-10, to_string(k));
      }
    }
  }
}

TEST_CASE("invariant: KL argument order matters") {
  const Tensor4 a(Shape4{1, 1, 1, 3}, std::vector<double>{4.0, 0.0, 0.0});
  const Tensor4 b(Shape4{1, 1, 1, 3}, std::vector<double>{0.0, 0.0, 0.0});
  const double ab = channelwise_kl(a, b, 1.0).value;
  const double ba = channelwise_kl(b, a, 1.0).value;
  CHECK(std::abs(ab - ba) > 0.01);
}

TEST_CASE("invariant: low-mass teacher positions carry less weight") {
  // Teacher: one dominant position, one essentially empty position.
  Tensor4 t(Shape4{1, 1, 3, 3});
  t(0, 0, 0, 0) = 5.0;
  t(0, 0, 2, 2) = -20.0;
  const Tensor4 pt = softmax_over_axis(t, Axis::Spatial, 1.0);
  REQUIRE(pt(0, 0, 2, 2) < 1e-6);
  REQUIRE(pt(0, 0, 0, 0) > 0.5);

  const Tensor4 s(t.shape());
  const double base = channelwise_kl(t, s, 1.0).value;
  for (double d : {-0.1, 0.1}) {
    Tensor4 low = s, high = s;
    low(0, 0, 2, 2) += d;
    high(0, 0, 0, 0) += d;
    const double dl = std::abs(channelwise_kl(t, low, 1.0).value - base);
    const double dh = std::abs(channelwise_kl(t, high, 1.0).value - base);
    CHECK(dl < dh);
  }
}

TEST_CASE("invariant: entropy grows with temperature") {
  Rng rng(42);
  const Tensor4 x = oracle::random_tensor(rng, Shape4{2, 3, 4, 4}, -5, 5);
  std::vector<double> last(6, -1.0);
  for (double T : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    const ChannelDistribution d = channel_distribution(x, T);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c) {
        const double h = entropy(d.row(n, c));
        CHECK(h >= last[n * 3 + c]);
        last[n * 3 + c] = h;
      }
  }
}

TEST_CASE("invariant: channel permutation equivariance") {
  Rng rng(43);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const std::vector<LabelMap::value_type> inverse{1, 3, 0, 2};  // class k moves to channel inverse[k]
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 4, 4, 5});
    const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 4, 4, 5});
    const LabelMap l = random_labels(rng, 2, 4, 5, 4);
    LabelMap lp = l;
    for (auto& v : lp.data()) if (v != LabelMap::kIgnore) v = inverse[v];
    const Tensor4 tp = permute_channels(t, perm);
    const Tensor4 sp = permute_channels(s, perm);
    for (LossKind k : kAllLossKinds) {
      const LabelMap& labels_p = k == LossKind::CrossEntropy ? lp : l;
      const double a = evaluate_loss(spec_for(k, 0.7), t, s, &l).value;
      const double b = evaluate_loss(spec_for(k, 0.7), tp, sp, &labels_p).value;
      CHECK_MESSAGE(std::abs(a - b) <= 1e-12, to_string(k));
    }
  }
}

TEST_CASE("gradients: tight checks on small instances") {
  Rng rng(44);
  {
    const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 4, 3, 3});
    const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 4, 3, 3});
    CHECK(worst_fd_error(spec_for(LossKind::CwKl), t, s, nullptr) < 1e-6);
    CHECK(worst_fd_error(spec_for(LossKind::CwL2), t, s, nullptr) < 1e-6);
    CHECK(worst_fd_error(spec_for(LossKind::CwBhattacharyya, 2.0), t, s, nullptr) < 1e-6);
  }
  {
    const Tensor4 t = oracle::random_tensor(rng, Shape4{2, 3, 4, 4});
    const Tensor4 s = oracle::random_tensor(rng, Shape4{2, 3, 4, 4});
    CHECK(worst_fd_error(spec_for(LossKind::AttentionTransfer), t, s, nullptr) < 1e-6);
  }
}

TEST_CASE("gradients: every loss on 20 random (2,4,5,6) instances") {
  Rng rng(45);
  const Shape4 sh{2, 4, 5, 6};
  for (LossKind k : kAllLossKinds) {
    double worst = 0;
    for (int i = 0; i < 20; ++i) {
      const Tensor4 t = oracle::random_tensor(rng, sh);
      const Tensor4 s = oracle::random_tensor(rng, sh);
      const LabelMap l = random_labels(rng, 2, 5, 6, k == LossKind::CrossEntropy ? 4 : 3);
      worst = std::max(worst, worst_fd_error(spec_for(k, 1.0), t, s, &l));
    }
    CHECK_MESSAGE(worst < 1e-4, to_string(k) << " worst " << worst);
  }
}
