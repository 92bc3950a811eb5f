#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>

#include "cwkd/tensor.hpp"

namespace cwkd {

/// conv(3->F, 3x3, pad 1) -> relu -> conv(F->F, 3x3, pad 1) -> relu [feature tap]
/// -> conv(F->K, 1x1) [score tap]. Spatial size is preserved end to end.
struct ToyNet {
  static constexpr std::size_t kInputChannels = 3;
  static constexpr std::size_t kParamCount = 6;
  static constexpr std::array<std::string_view, kParamCount> kParamNames = {
      "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "head.weight", "head.bias"};

  std::size_t width = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  // Order matches kParamNames. Biases are stored as (1, c, 1, 1).
  std::array<Tensor4, kParamCount> params;

  const Tensor4& conv1_w() const { return params[0]; }
  const Tensor4& conv1_b() const { return params[1]; }
  const Tensor4& conv2_w() const { return params[2]; }
  const Tensor4& conv2_b() const { return params[3]; }
  const Tensor4& head_w() const { return params[4]; }
  const Tensor4& head_b() const { return params[5]; }
};

using NetGrads = std::array<Tensor4, ToyNet::kParamCount>;

struct TapPair {
  Tensor4 feature;  // (n, F, h, w)
  Tensor4 score;    // (n, K, h, w)
};

/// Intermediate activations needed by backward().
struct ForwardTrace {
  Tensor4 images;
  Tensor4 pre1;
  Tensor4 act1;
  Tensor4 pre2;
  TapPair taps;
};

/// Per-layer init scale sqrt(1 / fan_in).
double init_scale(std::size_t fan_in);

/// Weights uniform in +-init_scale(fan_in) drawn from Rng(seed), zero biases.
ToyNet init_toynet(std::uint64_t seed, std::size_t width, std::size_t classes);

/// All-zero network of the given shape (useful for gradient buffers).
ToyNet zeros_like(const ToyNet& net);

std::size_t parameter_count(const ToyNet& net);

ForwardTrace forward_trace(const ToyNet& net, const Tensor4& images);
TapPair forward(const ToyNet& net, const Tensor4& images);

/// Chain rule through both taps: the feature-tap gradient joins the gradient
/// arriving from the head. Either tap gradient may be empty (treated as zero).
NetGrads backward(const ToyNet& net, const ForwardTrace& trace, const Tensor4& grad_feature,
                  const Tensor4& grad_score);

// Checkpoint directory: manifest.json (layer names, shapes, files, seed) plus one
// CWT1 file per parameter.
void save_checkpoint(const ToyNet& net, const std::filesystem::path& dir);
ToyNet load_checkpoint(const std::filesystem::path& dir);

}  // namespace cwkd
