#include "cwkd/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <thread>

#include "cwkd/errors.hpp"
#include "cwkd/io.hpp"
#include "cwkd/rng.hpp"

namespace cwkd {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSuper = 4;  // anti-aliasing: kSuper x kSuper samples per pixel

using Rgb = std::array<double, 3>;

struct Primitive {
  ShapeType type{};
  // Disk: centre + radius. Rectangle: [x0, x1] x [y0, y1]. Triangle: vertices.
  double cx = 0, cy = 0, r = 0;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::array<std::array<double, 2>, 3> v{};
  Rgb color{};
  double period = 4.0;
  double phase = 0.0;
  double amplitude = 0.0;
};

struct Background {
  Rgb base{};
  Rgb amp{};
  double fx = 0, fy = 0, phase = 0;
  double gx = 0, gy = 0, gphase = 0;
};

double edge(const std::array<double, 2>& a, const std::array<double, 2>& b, double x, double y) {
  return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
}

bool contains(const Primitive& p, double x, double y) {
  switch (p.type) {
    case ShapeType::Disk:
      return (x - p.cx) * (x - p.cx) + (y - p.cy) * (y - p.cy) <= p.r * p.r;
    case ShapeType::Rectangle:
      return x >= p.x0 && x <= p.x1 && y >= p.y0 && y <= p.y1;
    case ShapeType::Triangle: {
      const double e0 = edge(p.v[0], p.v[1], x, y);
      const double e1 = edge(p.v[1], p.v[2], x, y);
      const double e2 = edge(p.v[2], p.v[0], x, y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

// Class-specific texture in [-1, 1]: horizontal stripes, vertical stripes, checkerboard.
double texture(const Primitive& p, double x, double y) {
  switch (p.type) {
    case ShapeType::Disk:
      return std::sin(kTwoPi * y / p.period + p.phase);
    case ShapeType::Rectangle:
      return std::sin(kTwoPi * x / p.period + p.phase);
    case ShapeType::Triangle:
      return std::sin(kTwoPi * x / p.period + p.phase) * std::sin(kTwoPi * y / p.period);
  }
  return 0.0;
}

Rgb shade(const Primitive& p, double x, double y) {
  const double t = p.amplitude * texture(p, x, y);
  return {p.color[0] + t, p.color[1] + t, p.color[2] + t};
}

Rgb shade(const Background& b, double x, double y) {
  const double s = std::sin(b.fx * x + b.fy * y + b.phase);
  const double u = std::sin(b.gx * x + b.gy * y + b.gphase);
  Rgb out{};
  for (int k = 0; k < 3; ++k) out[k] = b.base[k] + b.amp[k] * (k == 1 ? u : s);
  return out;
}

Primitive random_primitive(Rng& rng, ShapeType type, double h, double w) {
  const double dim = std::min(h, w);
  Primitive p;
  p.type = type;
  for (double& c : p.color) c = rng.uniform(0.25, 0.75);
  p.period = rng.uniform(2.5, 4.0);
  p.phase = rng.uniform(0.0, kTwoPi);
  p.amplitude = rng.uniform(0.20, 0.30);
  // Each shape class leans towards one colour channel, so colour carries
  // partial class evidence alongside geometry.
  p.color[static_cast<int>(type) - 1] += 0.12;
  switch (type) {
    case ShapeType::Disk:
      p.r = rng.uniform(0.14, 0.28) * dim;
      p.cx = rng.uniform(0.1, 0.9) * w;
      p.cy = rng.uniform(0.1, 0.9) * h;
      break;
    case ShapeType::Rectangle: {
      const double rw = rng.uniform(0.25, 0.5) * w;
      const double rh = rng.uniform(0.25, 0.5) * h;
      p.x0 = rng.uniform(-0.1 * w, w - 0.5 * rw);
      p.y0 = rng.uniform(-0.1 * h, h - 0.5 * rh);
      p.x1 = p.x0 + rw;
      p.y1 = p.y0 + rh;
      break;
    }
    case ShapeType::Triangle: {
      const double cx = rng.uniform(0.15, 0.85) * w;
      const double cy = rng.uniform(0.15, 0.85) * h;
      const double a0 = rng.uniform(0.0, kTwoPi);
      for (int k = 0; k < 3; ++k) {
        const double ang = a0 + k * kTwoPi / 3.0 + rng.uniform(-0.4, 0.4);
        const double rad = rng.uniform(0.2, 0.38) * dim;
        p.v[k] = {cx + rad * std::cos(ang), cy + rad * std::sin(ang)};
      }
      break;
    }
  }
  return p;
}

struct Scene {
  Background background;
  std::vector<Primitive> shapes;  // drawn in order; later shapes occlude earlier ones
};

Scene random_scene(Rng& rng, std::size_t h, std::size_t w, std::size_t classes) {
  Scene s;
  auto& b = s.background;
  for (double& c : b.base) c = rng.uniform(0.3, 0.7);
  for (double& a : b.amp) a = rng.uniform(0.05, 0.2);
  const double low = kTwoPi / std::max(h, w);
  b.fx = rng.uniform(-2.0, 2.0) * low;
  b.fy = rng.uniform(-2.0, 2.0) * low;
  b.phase = rng.uniform(0.0, kTwoPi);
  b.gx = rng.uniform(-2.0, 2.0) * low;
  b.gy = rng.uniform(-2.0, 2.0) * low;
  b.gphase = rng.uniform(0.0, kTwoPi);

  const std::size_t shape_types = classes - 1;
  const std::size_t count = 1 + rng.below(4);
  for (std::size_t i = 0; i < count; ++i) {
    const auto type = static_cast<ShapeType>(1 + rng.below(shape_types));
    s.shapes.push_back(random_primitive(rng, type, static_cast<double>(h), static_cast<double>(w)));
  }
  return s;
}

const Primitive* topmost(const Scene& s, double x, double y) {
  for (auto it = s.shapes.rbegin(); it != s.shapes.rend(); ++it) {
    if (contains(*it, x, y)) return &*it;
  }
  return nullptr;
}

void render(const Scene& scene, Rng& noise_rng, const GenerateOptions& opt, std::size_t h,
            std::size_t w, double* image, LabelMap::value_type* labels) {
  const std::size_t plane = h * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Rgb acc{};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSuper;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSuper;
          const Primitive* p = topmost(scene, px, py);
          const Rgb c = p != nullptr ? shade(*p, px, py) : shade(scene.background, px, py);
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      }
      const std::size_t i = y * w + x;
      for (int k = 0; k < 3; ++k) {
        double v = acc[k] / (kSuper * kSuper);
        if (opt.noise) v += opt.noise_sigma * noise_rng.normal();
        image[k * plane + i] = std::clamp(v, 0.0, 1.0);
      }
      const Primitive* centre = topmost(scene, x + 0.5, y + 0.5);
      labels[i] = centre != nullptr ? static_cast<LabelMap::value_type>(centre->type) : kBackground;
    }
  }
}

}  // namespace

Dataset generate(std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w,
                 std::size_t classes, const GenerateOptions& options) {
  if (classes < 2) throw ParameterError("generate: need at least 2 classes");
  if (classes > kMaxClasses) {
    throw ParameterError("generate: at most " + std::to_string(kMaxClasses) +
                         " classes are defined, got " + std::to_string(classes));
  }
  if (h < 16 || w < 16) throw ParameterError("generate: h and w must be >= 16");

  Dataset ds;
  ds.seed = seed;
  ds.classes = classes;
  ds.images = Tensor4(Shape4{count, 3, h, w});
  ds.labels = LabelMap(count, h, w);
  ds.scenes.resize(count);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint64_t scene_seed = Rng::derive(seed, "scene/" + std::to_string(i));
      Rng layout(Rng::derive(scene_seed, "layout"));
      Rng noise(Rng::derive(scene_seed, "noise"));
      const Scene scene = random_scene(layout, h, w, classes);
      ds.scenes[i] = SceneMeta{scene_seed, scene.shapes.size()};
      render(scene, noise, options, h, w, ds.images.data().data() + i * 3 * h * w,
             ds.labels.data().data() + i * h * w);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    work(0, count);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(count, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  return ds;
}

Tensor4 gather_images(const Dataset& ds, std::span<const std::size_t> indices) {
  const Shape4 s = ds.images.shape();
  Tensor4 out(Shape4{indices.size(), s.c, s.h, s.w});
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= s.n) throw ParameterError("gather_images: index out of range");
    std::copy_n(ds.images.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return out;
}

LabelMap gather_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  LabelMap out(indices.size(), ds.labels.h(), ds.labels.w());
  const std::size_t per = ds.labels.h() * ds.labels.w();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= ds.labels.n()) throw ParameterError("gather_labels: index out of range");
    std::copy_n(ds.labels.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return out;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.seed = ds.seed;
  out.classes = ds.classes;
  out.images = gather_images(ds, indices);
  out.labels = gather_labels(ds, indices);
  for (std::size_t i : indices) out.scenes.push_back(ds.scenes[i]);
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, double val_fraction) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ParameterError("split: fractions must be non-negative and sum to at most 1");
  }
  const std::size_t n = ds.size();
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(train_fraction * n)));
  const auto n_val = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(val_fraction * n)));
  std::vector<std::size_t> train(n_train), val(n_val);
  for (std::size_t i = 0; i < n_train; ++i) train[i] = i;
  for (std::size_t i = 0; i < n_val; ++i) val[i] = n_train + i;
  return {subset(ds, train), subset(ds, val)};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_cwt1(dir / "images.cwt", ds.images);
  Tensor4 labels(Shape4{ds.labels.n(), 1, ds.labels.h(), ds.labels.w()});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(ds.labels.data()[i]);
  write_cwt1(dir / "labels.cwt", labels);
  nlohmann::ordered_json j;
  j["seed"] = ds.seed;
  j["count"] = ds.size();
  j["height"] = ds.images.shape().h;
  j["width"] = ds.images.shape().w;
  j["classes"] = ds.classes;
  j["images"] = "images.cwt";
  j["labels"] = "labels.cwt";
  j["scenes"] = nlohmann::ordered_json::array();
  for (const auto& s : ds.scenes) j["scenes"].push_back({{"seed", s.seed}, {"shapes", s.shape_count}});
  write_text(dir / "index.json", j.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "index.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset index: " + std::string(e.what()));
  }
  Dataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.classes = j.at("classes").get<std::size_t>();
  ds.images = read_cwt1(dir / j.at("images").get<std::string>());
  const Tensor4 labels = read_cwt1(dir / j.at("labels").get<std::string>());
  const Shape4 s = labels.shape();
  if (s.c != 1 || s.n != ds.images.shape().n || s.h != ds.images.shape().h ||
      s.w != ds.images.shape().w) {
    throw FormatError("dataset: labels do not match images");
  }
  ds.labels = LabelMap(s.n, s.h, s.w);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ds.labels.data()[i] = static_cast<LabelMap::value_type>(labels[i]);
  }
  for (const auto& sc : j.at("scenes")) {
    ds.scenes.push_back(SceneMeta{sc.at("seed").get<std::uint64_t>(), sc.at("shapes").get<std::size_t>()});
  }
  if (ds.scenes.size() != s.n) throw FormatError("dataset: scene count mismatch");
  return ds;
}

}  // namespace cwkd
