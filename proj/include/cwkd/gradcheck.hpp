#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cwkd/tensor.hpp"

namespace cwkd {

using ScalarFn = std::function<double(const Tensor4&)>;

/// Central differences (f(x + eps e_k) - f(x - eps e_k)) / (2 eps) for every
/// coordinate k. eps must lie in [1e-7, 1e-3]; the default 1e-5 balances
/// truncation against round-off for doubles.
Tensor4 finite_diff_grad(const ScalarFn& f, const Tensor4& x, double eps = 1e-5);

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

struct GradDiff {
  double max_rel_error = 0.0;
  std::array<std::size_t, 4> worst{};  // (n, c, h, w)
};

GradDiff compare_gradients(const Tensor4& analytic, const Tensor4& numeric);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::array<std::size_t, 4> worst{};
  Shape4 worst_shape{};
  std::size_t instances = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;

  bool pass() const;
  std::string to_json() const;
};

/// Runs every loss kind on `instances` random (teacher, student[, labels]) draws per
/// shape. Inputs are uniform in [-1, 1]. An entry passes when its worst relative
/// error is strictly below `tolerance`, so tolerance 0 fails everything.
GradCheckReport check_all_losses(std::uint64_t seed, std::span<const Shape4> shapes,
                                 double tolerance, std::size_t instances = 1,
                                 double eps = 1e-5);

}  // namespace cwkd
