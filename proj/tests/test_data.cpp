#include <doctest.h>

#include <filesystem>
#include <vector>

#include "cwkd/data.hpp"
#include "cwkd/errors.hpp"

using namespace cwkd;
namespace fs = std::filesystem;

TEST_CASE("generate: bit-identical for a fixed seed, independent of thread count") {
  const Dataset a = generate(0, 12, 24, 20, 4);
  GenerateOptions opt;
  opt.threads = 3;
  const Dataset b = generate(0, 12, 24, 20, 4, opt);
  CHECK(a.images.vec() == b.images.vec());
  CHECK(a.labels == b.labels);
  CHECK(a.images.shape() == Shape4{12, 3, 24, 20});
  CHECK(a.labels.n() == 12);

  const Dataset c = generate(1, 12, 24, 20, 4);
  CHECK(a.images.vec() != c.images.vec());
}

TEST_CASE("generate: empty dataset and argument errors") {
  const Dataset e = generate(0, 0, 16, 16, 4);
  CHECK(e.size() == 0);
  CHECK(e.images.size() == 0);
  CHECK_THROWS_AS(generate(0, 1, 16, 16, 5), ParameterError);
  CHECK_THROWS_AS(generate(0, 1, 16, 16, 1), ParameterError);
  CHECK_THROWS_AS(generate(0, 1, 15, 16, 4), ParameterError);
  CHECK_THROWS_AS(generate(0, 1, 16, 8, 4), ParameterError);
}

TEST_CASE("generate: value ranges, labels and scene metadata") {
  const Dataset ds = generate(3, 30, 32, 32, 4);
  for (double v : ds.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (auto l : ds.labels.data()) {
    CHECK(l >= 0);
    CHECK(l < 4);
  }
  for (const auto& s : ds.scenes) {
    CHECK(s.shape_count >= 1);
    CHECK(s.shape_count <= 4);
  }

  const Dataset two = generate(3, 30, 32, 32, 2);
  for (auto l : two.labels.data()) CHECK(l < 2);
}

TEST_CASE("generate: class histogram over 200 scenes at seed 0") {
  const Dataset ds = generate(0, 200, 32, 32, 4);
  std::vector<std::size_t> hist(4, 0);
  for (auto l : ds.labels.data()) ++hist[static_cast<std::size_t>(l)];
  const std::size_t total = ds.labels.size();
  CHECK(hist[0] * 2 > total);
  for (std::size_t k = 1; k < 4; ++k) CHECK(hist[k] > 0);
}

TEST_CASE("generate: labels do not depend on noise") {
  GenerateOptions clean;
  clean.noise = false;
  const Dataset a = generate(5, 8, 20, 20, 4);
  const Dataset b = generate(5, 8, 20, 20, 4, clean);
  CHECK(a.labels == b.labels);
  CHECK(a.images.vec() != b.images.vec());
  double worst = 0;
  for (std::size_t i = 0; i < a.images.size(); ++i) worst = std::max(worst, std::abs(a.images[i] - b.images[i]));
  CHECK(worst < 0.05 * 7);  // seven sigma
}

TEST_CASE("split: contiguous, disjoint, rounded") {
  const Dataset ds = generate(1, 10, 16, 16, 3);
  auto [all, none] = split(ds, 1.0, 0.0);
  CHECK(all.size() == 10);
  CHECK(none.size() == 0);

  auto [train, val] = split(ds, 0.5, 0.5);
  CHECK(train.size() == 5);
  CHECK(val.size() == 5);
  CHECK(train.scenes.front().seed == ds.scenes[0].seed);
  CHECK(val.scenes.front().seed == ds.scenes[5].seed);
  for (const auto& t : train.scenes)
    for (const auto& v : val.scenes) CHECK(t.seed != v.seed);
  const std::size_t plane = 3 * 16 * 16;
  CHECK(std::equal(val.images.data().begin(), val.images.data().end(), ds.images.data().begin() + 5 * plane));

  CHECK_THROWS_AS(split(ds, 0.8, 0.3), ParameterError);
  CHECK_THROWS_AS(split(ds, -0.1, 0.3), ParameterError);
}

TEST_CASE("subset and gather") {
  const Dataset ds = generate(2, 6, 16, 16, 4);
  const std::vector<std::size_t> idx{4, 1};
  const Dataset s = subset(ds, idx);
  CHECK(s.size() == 2);
  CHECK(s.scenes[0].seed == ds.scenes[4].seed);
  const Tensor4 img = gather_images(ds, idx);
  CHECK(img.shape() == Shape4{2, 3, 16, 16});
  CHECK(img(1, 2, 3, 4) == ds.images(1, 2, 3, 4));
  const LabelMap l = gather_labels(ds, idx);
  CHECK(l(0, 5, 6) == ds.labels(4, 5, 6));
  const std::vector<std::size_t> bad{6};
  CHECK_THROWS_AS(gather_images(ds, bad), ParameterError);
}

TEST_CASE("dataset persistence round trip") {
  const fs::path dir = fs::temp_directory_path() / "cwkd_test_dataset";
  fs::remove_all(dir);
  const Dataset ds = generate(4, 5, 16, 18, 4);
  save_dataset(ds, dir);
  CHECK(fs::exists(dir / "index.json"));
  CHECK(fs::exists(dir / "images.cwt"));
  CHECK(fs::exists(dir / "labels.cwt"));
  const Dataset back = load_dataset(dir);
  CHECK(back.seed == ds.seed);
  CHECK(back.classes == 4);
  CHECK(back.images.vec() == ds.images.vec());
  CHECK(back.labels == ds.labels);
  CHECK(back.scenes.size() == 5);
  CHECK(back.scenes[3].seed == ds.scenes[3].seed);
  fs::remove_all(dir);
}
