#include "cwkd/metrics.hpp"

#include <cmath>
#include <numeric>

#include "cwkd/errors.hpp"

namespace cwkd {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t classes, std::vector<std::uint64_t> counts) {
  if (counts.size() != classes * classes) throw ShapeError("confusion matrix must be K x K");
  ConfusionMatrix m(classes);
  m.counts_ = std::move(counts);
  return m;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) {
    throw ParameterError("confusion matrix: class index out of range");
  }
  ++counts_[truth * classes_ + predicted];
}

LabelMap argmax_channels(const Tensor4& scores) {
  const Shape4 s = scores.shape();
  LabelMap out(s.n, s.h, s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < s.c; ++c) {
          if (scores(n, c, y, x) > scores(n, best, y, x)) best = c;
        }
        out(n, y, x) = static_cast<LabelMap::value_type>(best);
      }
    }
  }
  return out;
}

void ConfusionMatrix::add(const Tensor4& scores, const LabelMap& labels) {
  const Shape4 s = scores.shape();
  if (s.c != classes_) throw ShapeError("confusion matrix: score channels != classes");
  if (labels.n() != s.n || labels.h() != s.h || labels.w() != s.w) {
    throw ShapeError("confusion matrix: labels do not match scores");
  }
  const LabelMap pred = argmax_channels(scores);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto t = labels.data()[i];
    if (t == LabelMap::kIgnore) continue;
    add(static_cast<std::size_t>(t), static_cast<std::size_t>(pred.data()[i]));
  }
}

IoUResult miou(const ConfusionMatrix& conf) {
  const std::size_t k = conf.classes();
  IoUResult r;
  r.per_class.resize(k);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += conf.at(o, c);
      fn += conf.at(c, o);
    }
    const std::uint64_t tp = conf.at(c, c);
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[c] = iou;
    sum += iou;
    ++used;
  }
  r.mean = used == 0 ? 0.0 : sum / static_cast<double>(used);
  return r;
}

double macc(const ConfusionMatrix& conf) {
  const std::size_t k = conf.classes();
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0;
    for (std::size_t o = 0; o < k; ++o) row += conf.at(c, o);
    if (row == 0) continue;
    sum += static_cast<double>(conf.at(c, c)) / static_cast<double>(row);
    ++used;
  }
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

namespace {

std::optional<std::uint64_t> integral_power(std::uint64_t base, double p) {
  if (p < 0 || std::floor(p) != p) return std::nullopt;
  std::uint64_t out = 1;
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(p); ++i) out *= base;
  return out;
}

}  // namespace

ComplexityReport complexity(LossKind kind, std::uint64_t h, std::uint64_t w, std::uint64_t c,
                            std::uint64_t n, double p) {
  const std::uint64_t hw = h * w;
  const std::uint64_t hwc = hw * c;
  ComplexityReport r{kind, "", 0.0, std::nullopt};
  switch (kind) {
    case LossKind::CwKl:
    case LossKind::CwBhattacharyya:
    case LossKind::CwL2:
    case LossKind::Mimic:
    case LossKind::Pixelwise:
      r.term = "h_x*w_x*c_x";
      r.exact = hwc;
      break;
    case LossKind::AttentionTransfer:
      r.term = "h_x*w_x*(c_x)^p";
      if (const auto cp = integral_power(c, p)) r.exact = hw * *cp;
      else r.value = static_cast<double>(hw) * std::pow(static_cast<double>(c), p);
      break;
    case LossKind::LocalSimilarity:
      r.term = "8*h_x*w_x*c_x";
      r.exact = 8 * hwc;
      break;
    case LossKind::PairwiseAffinity:
      r.term = "(h_x*w_x)^2*c_x";
      r.exact = hw * hw * c;
      break;
    case LossKind::Ifvd:
      r.term = "h_x*w_x*c_x*n";
      r.exact = hwc * n;
      break;
    case LossKind::CrossEntropy:
      throw UnsupportedError("complexity: CE is not a distillation term");
  }
  if (r.exact) r.value = static_cast<double>(*r.exact);
  return r;
}

ComplexityReport complexity(std::string_view kind, std::uint64_t h, std::uint64_t w,
                            std::uint64_t c, std::uint64_t n, double p) {
  if (kind == "HO") {
    throw UnsupportedError("complexity: HO depends on the discriminator, O(D)");
  }
  return complexity(parse_loss_kind(kind), h, w, c, n, p);
}

std::size_t count_params(std::size_t width, std::size_t classes) {
  const std::size_t f = width, k = classes;
  return ToyNet::kInputChannels * 9 * f + f + 9 * f * f + f + f * k + k;
}

std::size_t count_params(const ToyNet& net) { return count_params(net.width, net.classes); }

}  // namespace cwkd
