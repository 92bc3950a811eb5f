#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cwkd/errors.hpp"
#include "cwkd/gradcheck.hpp"
#include "cwkd/losses.hpp"
#include "cwkd/rng.hpp"
#include "oracles.hpp"

using namespace cwkd;

TEST_CASE("finite_diff_grad: quadratic and constant functions") {
  const Tensor4 x(Shape4{1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
  const Tensor4 g = finite_diff_grad(
      [](const Tensor4& v) {
        double s = 0;
        for (double e : v.data()) s += e * e;
        return s;
      },
      x);
  CHECK(std::abs(g[0] - 2.0) < 1e-8);
  CHECK(std::abs(g[1] - 4.0) < 1e-8);

  const Tensor4 z = finite_diff_grad([](const Tensor4&) { return 3.5; }, x);
  CHECK(max_abs(z) == 0.0);
}

TEST_CASE("finite_diff_grad: error below 1e-8 on polynomials") {
  Rng rng(50);
  const Tensor4 x = oracle::random_tensor(rng, Shape4{1, 2, 2, 3});
  // f = sum_i a_i x_i^3 + b_i x_i^2; central differences are exact up to eps^2 * a_i.
  std::vector<double> a(x.size()), b(x.size());
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  const Tensor4 g = finite_diff_grad(
      [&](const Tensor4& v) {
        double s = 0;
        for (std::size_t i = 0; i < v.size(); ++i) s += a[i] * v[i] * v[i] * v[i] + b[i] * v[i] * v[i];
        return s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double exact = 3 * a[i] * x[i] * x[i] + 2 * b[i] * x[i];
    CHECK(std::abs(g[i] - exact) < 1e-8);
  }
}

TEST_CASE("finite_diff_grad: argument and evaluation errors") {
  const Tensor4 x(Shape4{1, 1, 1, 2}, 1.0);
  auto f = [](const Tensor4& v) { return v[0]; };
  CHECK_THROWS_AS(finite_diff_grad(f, x, 1e-8), ParameterError);
  CHECK_THROWS_AS(finite_diff_grad(f, x, 1e-2), ParameterError);
  CHECK_NOTHROW(finite_diff_grad(f, x, 1e-7));
  CHECK_NOTHROW(finite_diff_grad(f, x, 1e-3));
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor4&) { return std::numeric_limits<double>::quiet_NaN(); }, x),
                  OracleError);
  CHECK_THROWS_AS(
      finite_diff_grad([](const Tensor4& v) { return v[0] > 1.0 ? std::numeric_limits<double>::infinity() : 0.0; }, x),
      OracleError);
}

TEST_CASE("relative_error: floor keeps tiny values comparable") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-12, 0.0) == doctest::Approx(1e-4));

  const Tensor4 a(Shape4{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor4 b(Shape4{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 5});
  const GradDiff d = compare_gradients(a, b);
  CHECK(d.max_rel_error == doctest::Approx(0.2));
  CHECK(d.worst == std::array<std::size_t, 4>{0, 0, 1, 1});
  CHECK_THROWS_AS(compare_gradients(a, Tensor4(Shape4{1, 1, 1, 4})), ShapeError);
}

TEST_CASE("finite_diff_grad: channelwise_kl on a 1x2x2x2 instance") {
  Rng rng(51);
  const Tensor4 t = oracle::random_tensor(rng, Shape4{1, 2, 2, 2});
  const Tensor4 s = oracle::random_tensor(rng, Shape4{1, 2, 2, 2});
  const Tensor4 num = finite_diff_grad([&](const Tensor4& v) { return channelwise_kl(t, v, 1.0).value; }, s);
  CHECK(compare_gradients(channelwise_kl(t, s, 1.0).grad_student, num).max_rel_error < 1e-6);
}

TEST_CASE("check_all_losses: default run, strict bound, empty list") {
  const std::vector<Shape4> shapes{{1, 2, 3, 3}, {2, 4, 5, 6}};
  const GradCheckReport r = check_all_losses(0, shapes, 1e-4);
  CHECK(r.entries.size() == kAllLossKinds.size());
  CHECK(r.pass());
  for (const auto& e : r.entries) CHECK_MESSAGE(e.pass, e.name << " " << e.max_rel_error);

  const GradCheckReport strict = check_all_losses(0, shapes, 0.0);
  CHECK_FALSE(strict.pass());
  for (const auto& e : strict.entries) CHECK_FALSE(e.pass);

  const GradCheckReport empty = check_all_losses(0, std::span<const Shape4>{}, 1e-4);
  CHECK(empty.entries.empty());
  CHECK(empty.pass());

  CHECK_THROWS_AS(check_all_losses(0, shapes, -1.0), ParameterError);
}

TEST_CASE("check_all_losses: deterministic report") {
  const std::vector<Shape4> shapes{{1, 3, 3, 4}};
  const std::string a = check_all_losses(9, shapes, 1e-4, 2).to_json();
  const std::string b = check_all_losses(9, shapes, 1e-4, 2).to_json();
  CHECK(a == b);
  CHECK(a.find("\"CW_KL\"") != std::string::npos);
  CHECK(a.find("\"max_rel_error\"") != std::string::npos);
}
