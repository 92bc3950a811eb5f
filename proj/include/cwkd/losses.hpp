#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwkd/rng.hpp"
#include "cwkd/tensor.hpp"

namespace cwkd {

enum class LossKind {
  CwKl,
  CwBhattacharyya,
  CwL2,
  Mimic,
  AttentionTransfer,
  Pixelwise,
  LocalSimilarity,
  PairwiseAffinity,
  Ifvd,
  CrossEntropy,
};

inline constexpr std::array<LossKind, 10> kAllLossKinds = {
    LossKind::CwKl,           LossKind::CwBhattacharyya,  LossKind::CwL2,
    LossKind::Mimic,          LossKind::AttentionTransfer, LossKind::Pixelwise,
    LossKind::LocalSimilarity, LossKind::PairwiseAffinity, LossKind::Ifvd,
    LossKind::CrossEntropy};

/// Short names used in configs and CSV headers: CW_KL, CW_BHAT, CW_L2, MIMIC,
/// AT, PI, LOCAL, PA, IFVD, CE.
std::string_view to_string(LossKind kind);
/// Accepts the short names plus CW_BHATTACHARYYA. "HO" raises UnsupportedError.
LossKind parse_loss_kind(std::string_view name);
bool is_channelwise(LossKind kind);

enum class Target { Feature, Score };
std::string_view to_string(Target t);
Target parse_target(std::string_view name);

/// How channel-wise losses reduce their sum over (sample, channel) rows.
/// Mean divides the raw sum by n*c.
enum class Reduction { Mean, Sum };

struct LossSpec {
  LossKind kind = LossKind::CwKl;
  double temperature = 1.0;  // CW_* and PI
  double p = 2.0;            // AT exponent
  double alpha = 1.0;        // weight in the combined objective
  Target target = Target::Score;
  Reduction reduction = Reduction::Mean;

  /// Throws ParameterError on temperature <= 0, alpha < 0 or p < 1.
  void validate() const;
};

struct LossResult {
  double value = 0.0;
  Tensor4 grad_student;
};

/// Per-(sample, channel) softmax over the h*w positions at temperature T.
struct ChannelDistribution {
  Tensor4 probs;

  std::size_t rows() const { return probs.shape().n * probs.shape().c; }
  std::size_t positions() const { return probs.shape().plane(); }
  std::span<const double> row(std::size_t n, std::size_t c) const { return probs.plane(n, c); }
};

ChannelDistribution channel_distribution(const Tensor4& x, double temperature);

// Channel-wise distillation. Teacher is always the first argument; gradients are
// only ever taken with respect to the student.
//
// KL:   sum_{n,c} sum_i pT_i log(pT_i / pS_i), gradient (pS - pT) / T per row.
//       No T^2 factor is applied to the gradient.
// Bhat: sum_{n,c} -ln sum_i sqrt(pT_i pS_i)
// L2:   sum_{n,c} sum_i (pT_i - pS_i)^2
// With Reduction::Mean both value and gradient are divided by n*c.
LossResult channelwise_kl(const Tensor4& teacher, const Tensor4& student, double temperature,
                          Reduction reduction = Reduction::Mean);
LossResult channelwise_bhattacharyya(const Tensor4& teacher, const Tensor4& student,
                                     double temperature, Reduction reduction = Reduction::Mean);
LossResult channelwise_l2(const Tensor4& teacher, const Tensor4& student, double temperature,
                          Reduction reduction = Reduction::Mean);

/// Mean over the n*h*w pixels of ||t_i - s_i||^2.
LossResult mimic_l2(const Tensor4& teacher, const Tensor4& student);

/// Attention maps a_i = sum_c |x_ic|^p, L2-normalized per sample; value is the
/// batch mean of ||aT - aS||^2. Throws NormalizationError on an all-zero map.
LossResult attention_transfer(const Tensor4& teacher, const Tensor4& student, double p);

/// Mean over pixels of KL(softmax(t_i / tau) || softmax(s_i / tau)) along channels.
LossResult pixelwise_kl(const Tensor4& teacher, const Tensor4& student, double tau);

/// s_i = sum over the 8-neighbourhood of ||x_j - x_i|| (zero padding outside the
/// image); value is the mean over n*h*w of (sT_i - sS_i)^2.
LossResult local_similarity(const Tensor4& teacher, const Tensor4& student);

/// Per sample (h*w) x (h*w) cosine-similarity matrices; value is the mean over
/// n*(h*w)^2 entries of the squared difference. Zero vectors have similarity 0.
LossResult pairwise_affinity(const Tensor4& teacher, const Tensor4& student);

/// v_i = cos(x_i, prototype of label_i) with prototypes the per-sample class
/// means; value is the mean over labelled pixels of (vT_i - vS_i)^2. Labels must
/// already be at feature resolution.
LossResult ifvd(const Tensor4& teacher, const Tensor4& student, const LabelMap& labels);

/// Channel softmax + negative log-likelihood, averaged over non-ignore pixels.
/// All-ignore input gives value 0 and a zero gradient.
LossResult cross_entropy(const Tensor4& logits, const LabelMap& labels);

/// Dispatches on spec.kind. CE ignores `teacher`; IFVD and CE need labels.
LossResult evaluate_loss(const LossSpec& spec, const Tensor4& teacher, const Tensor4& student,
                         const LabelMap* labels);

/// Trainable 1x1 convolution mapping student channels onto the teacher's.
struct Aligner {
  Tensor4 weight;  // (c_out, c_in, 1, 1)
  Tensor4 bias;    // (1, c_out, 1, 1)

  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t out_channels() const { return weight.shape().n; }

  static Aligner identity(std::size_t channels);
  /// Weights uniform in +-sqrt(1 / c_in), zero bias.
  static Aligner random(Rng& rng, std::size_t c_in, std::size_t c_out);
};

struct AlignerGrads {
  Tensor4 grad_x;
  Tensor4 grad_weight;
  Tensor4 grad_bias;
};

/// nullptr aligner passes the tensor through unchanged.
Tensor4 align_channels(const Tensor4& student_feat, const Aligner* aligner);
AlignerGrads align_channels_backward(const Tensor4& student_feat, const Aligner& aligner,
                                     const Tensor4& grad_out);

struct WeightedTerm {
  LossSpec spec;
  LossResult result;
};

/// value = sum_k alpha_k value_k and grad = sum_k alpha_k grad_k. All terms must
/// carry gradients for the same tensor (same shape); throws ShapeError otherwise.
LossResult combine(std::span<const WeightedTerm> terms);

}  // namespace cwkd
