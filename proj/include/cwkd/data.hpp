#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cwkd/tensor.hpp"

namespace cwkd {

enum class ShapeType { Disk = 1, Rectangle = 2, Triangle = 3 };

inline constexpr std::size_t kMaxClasses = 4;  // background + three shape types
inline constexpr LabelMap::value_type kBackground = 0;

struct SceneMeta {
  std::uint64_t seed = 0;
  std::size_t shape_count = 0;
};

/// A batch of scenes: images (count, 3, h, w) in [0, 1] and labels (count, h, w).
struct Dataset {
  std::uint64_t seed = 0;
  std::size_t classes = 0;
  Tensor4 images;
  LabelMap labels;
  std::vector<SceneMeta> scenes;

  std::size_t size() const { return scenes.size(); }
};

struct GenerateOptions {
  bool noise = true;       // per-pixel Gaussian noise, sigma 0.05, then clamp
  double noise_sigma = 0.05;
  std::size_t threads = 1;  // scenes are independent; output does not depend on this
};

/// Scenes of 1-4 anti-aliased disks/rectangles/triangles on a textured background.
/// Class of a pixel is the type of the topmost shape covering its centre, or
/// background. With K < 4 only the first K - 1 shape types are drawn.
/// Requires 2 <= K <= 4 and h, w >= 16.
Dataset generate(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w,
                 std::size_t classes, const GenerateOptions& options = {});

/// Contiguous split: the first round(train * n) scenes, then the next round(val * n).
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, double val_fraction);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
Tensor4 gather_images(const Dataset& ds, std::span<const std::size_t> indices);
LabelMap gather_labels(const Dataset& ds, std::span<const std::size_t> indices);

/// Directory with images.cwt, labels.cwt (labels as doubles, shape (n, 1, h, w))
/// and index.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace cwkd
