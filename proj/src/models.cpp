#include "cwkd/models.hpp"

#include <json.hpp>

#include <cmath>

#include "cwkd/errors.hpp"
#include "cwkd/io.hpp"
#include "cwkd/rng.hpp"

namespace cwkd {

namespace {

Tensor4 empty_if_missing(const Tensor4& g, const Shape4& s) {
  return g.empty() ? Tensor4(s) : g;
}

void check_tap_grad(const Tensor4& g, const Shape4& expected, const char* which) {
  if (!g.empty() && g.shape() != expected) {
    throw ShapeError(std::string("backward: ") + which + " gradient shape " + to_string(g.shape()) +
                     " does not match tap " + to_string(expected));
  }
}

std::array<Shape4, ToyNet::kParamCount> param_shapes(std::size_t width, std::size_t classes) {
  return {Shape4{width, ToyNet::kInputChannels, 3, 3}, Shape4{1, width, 1, 1},
          Shape4{width, width, 3, 3},                  Shape4{1, width, 1, 1},
          Shape4{classes, width, 1, 1},                Shape4{1, classes, 1, 1}};
}

}  // namespace

double init_scale(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

ToyNet init_toynet(std::uint64_t seed, std::size_t width, std::size_t classes) {
  if (width == 0 || classes == 0) throw ParameterError("init_toynet: width and classes must be > 0");
  ToyNet net{width, classes, seed, {}};
  Rng rng(seed);
  const auto shapes = param_shapes(width, classes);
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) {
    net.params[i] = Tensor4(shapes[i]);
    if (i % 2 == 1) continue;  // biases start at zero
    const Shape4& s = shapes[i];
    const double scale = init_scale(s.c * s.h * s.w);
    for (double& v : net.params[i].data()) v = rng.uniform(-scale, scale);
  }
  return net;
}

ToyNet zeros_like(const ToyNet& net) {
  ToyNet z{net.width, net.classes, net.seed, {}};
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) z.params[i] = Tensor4(net.params[i].shape());
  return z;
}

std::size_t parameter_count(const ToyNet& net) {
  std::size_t total = 0;
  for (const auto& p : net.params) total += p.size();
  return total;
}

ForwardTrace forward_trace(const ToyNet& net, const Tensor4& images) {
  if (images.shape().c != ToyNet::kInputChannels) {
    throw ShapeError("forward: expected " + std::to_string(ToyNet::kInputChannels) +
                     "-channel images, got " + to_string(images.shape()));
  }
  ForwardTrace t;
  t.images = images;
  t.pre1 = conv2d(images, net.conv1_w(), net.conv1_b().data(), 1, 1);
  t.act1 = relu(t.pre1);
  t.pre2 = conv2d(t.act1, net.conv2_w(), net.conv2_b().data(), 1, 1);
  t.taps.feature = relu(t.pre2);
  t.taps.score = conv2d(t.taps.feature, net.head_w(), net.head_b().data(), 1, 0);
  return t;
}

TapPair forward(const ToyNet& net, const Tensor4& images) {
  return std::move(forward_trace(net, images).taps);
}

NetGrads backward(const ToyNet& net, const ForwardTrace& trace, const Tensor4& grad_feature,
                  const Tensor4& grad_score) {
  check_tap_grad(grad_feature, trace.taps.feature.shape(), "feature");
  check_tap_grad(grad_score, trace.taps.score.shape(), "score");
  NetGrads g;
  auto bias_grad = [](std::vector<double> b) {
    const std::size_t c = b.size();
    return Tensor4(Shape4{1, c, 1, 1}, std::move(b));
  };

  auto head = conv2d_backward(trace.taps.feature, net.head_w(),
                              empty_if_missing(grad_score, trace.taps.score.shape()), 1, 0, true);
  g[4] = std::move(head.grad_w);
  g[5] = bias_grad(std::move(head.grad_b));

  Tensor4 d_feature = std::move(head.grad_x);
  if (!grad_feature.empty()) d_feature += grad_feature;
  const Tensor4 d_pre2 = relu_backward(trace.pre2, d_feature);
  auto c2 = conv2d_backward(trace.act1, net.conv2_w(), d_pre2, 1, 1, true);
  g[2] = std::move(c2.grad_w);
  g[3] = bias_grad(std::move(c2.grad_b));

  const Tensor4 d_pre1 = relu_backward(trace.pre1, c2.grad_x);
  auto c1 = conv2d_backward(trace.images, net.conv1_w(), d_pre1, 1, 1, false);
  g[0] = std::move(c1.grad_w);
  g[1] = bias_grad(std::move(c1.grad_b));
  return g;
}

void save_checkpoint(const ToyNet& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json m;
  m["kind"] = "ToyNet";
  m["width"] = net.width;
  m["classes"] = net.classes;
  m["seed"] = net.seed;
  m["layers"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) {
    const std::string file = std::string(ToyNet::kParamNames[i]) + ".cwt";
    const Shape4 s = net.params[i].shape();
    m["layers"].push_back(
        {{"name", ToyNet::kParamNames[i]}, {"shape", {s.n, s.c, s.h, s.w}}, {"file", file}});
    write_cwt1(dir / file, net.params[i]);
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

ToyNet load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  if (m.value("kind", "") != "ToyNet") throw FormatError("checkpoint is not a ToyNet");
  ToyNet net{m.at("width").get<std::size_t>(), m.at("classes").get<std::size_t>(),
             m.at("seed").get<std::uint64_t>(), {}};
  const auto shapes = param_shapes(net.width, net.classes);
  const auto& layers = m.at("layers");
  if (layers.size() != ToyNet::kParamCount) throw FormatError("checkpoint: wrong layer count");
  for (std::size_t i = 0; i < ToyNet::kParamCount; ++i) {
    if (layers[i].at("name").get<std::string>() != ToyNet::kParamNames[i]) {
      throw FormatError("checkpoint: unexpected layer order");
    }
    net.params[i] = read_cwt1(dir / layers[i].at("file").get<std::string>());
    if (net.params[i].shape() != shapes[i]) {
      throw FormatError("checkpoint: " + std::string(ToyNet::kParamNames[i]) + " has shape " +
                        to_string(net.params[i].shape()));
    }
  }
  return net;
}

}  // namespace cwkd
