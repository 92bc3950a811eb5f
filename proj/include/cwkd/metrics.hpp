#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cwkd/losses.hpp"
#include "cwkd/models.hpp"
#include "cwkd/tensor.hpp"

namespace cwkd {

/// counts[truth * K + predicted]; ignore pixels are never added.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0);
  static ConfusionMatrix from_counts(std::size_t classes, std::vector<std::uint64_t> counts);

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::uint64_t total() const;
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  void add(std::size_t truth, std::size_t predicted);
  /// Adds argmax-over-channels of `scores` against `labels`.
  void add(const Tensor4& scores, const LabelMap& labels);

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Per-pixel argmax over channels; ties go to the lowest class index.
LabelMap argmax_channels(const Tensor4& scores);

struct IoUResult {
  std::vector<std::optional<double>> per_class;  // empty optional: zero union
  double mean = 0.0;
};

/// IoU_k = TP / (TP + FP + FN); zero-union classes are left out of the mean.
IoUResult miou(const ConfusionMatrix& conf);
/// Mean over classes with TP + FN > 0 of TP / (TP + FN).
double macc(const ConfusionMatrix& conf);

struct ComplexityReport {
  LossKind kind{};
  std::string term;     // leading-order cost in terms of h_x, w_x, c_x, n, p
  double value = 0.0;
  std::optional<std::uint64_t> exact;  // set whenever p is integral (or unused)
};

/// Leading-order training cost of a distillation loss on an (h, w, c) tap with
/// n classes and attention exponent p. CE and HO raise UnsupportedError.
ComplexityReport complexity(LossKind kind, std::uint64_t h, std::uint64_t w, std::uint64_t c,
                            std::uint64_t n, double p);
/// Name-based variant that also understands "HO".
ComplexityReport complexity(std::string_view kind, std::uint64_t h, std::uint64_t w,
                            std::uint64_t c, std::uint64_t n, double p);

/// Closed form: 3*9*F + F + 9*F*F + F + F*K + K.
std::size_t count_params(const ToyNet& net);
std::size_t count_params(std::size_t width, std::size_t classes);

}  // namespace cwkd
