#include "cwkd/losses.hpp"

#include <Eigen/Core>

#include <cmath>
#include <map>

#include "cwkd/errors.hpp"

namespace cwkd {

namespace {

struct KindName {
  LossKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {LossKind::CwKl, "CW_KL"},         {LossKind::CwBhattacharyya, "CW_BHAT"},
    {LossKind::CwL2, "CW_L2"},         {LossKind::Mimic, "MIMIC"},
    {LossKind::AttentionTransfer, "AT"}, {LossKind::Pixelwise, "PI"},
    {LossKind::LocalSimilarity, "LOCAL"}, {LossKind::PairwiseAffinity, "PA"},
    {LossKind::Ifvd, "IFVD"},          {LossKind::CrossEntropy, "CE"},
};

double row_scale(const Shape4& s, Reduction r) {
  return r == Reduction::Mean ? 1.0 / static_cast<double>(s.n * s.c) : 1.0;
}

void require_pair(const Tensor4& teacher, const Tensor4& student, const char* what) {
  require_same_shape(teacher, student, what);
}

void require_labels(const LabelMap& labels, const Shape4& s, const char* what) {
  if (labels.n() != s.n || labels.h() != s.h || labels.w() != s.w) {
    throw ShapeError(std::string(what) + ": label map (" + std::to_string(labels.n()) + ", " +
                     std::to_string(labels.h()) + ", " + std::to_string(labels.w()) +
                     ") does not match tensor " + to_string(s));
  }
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ParameterError(std::string(what) + " must be positive, got " + std::to_string(v));
  }
}

}  // namespace

std::string_view to_string(LossKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  for (const auto& kn : kKindNames) {
    if (kn.name == name) return kn.kind;
  }
  if (name == "CW_BHATTACHARYYA") return LossKind::CwBhattacharyya;
  if (name == "HO") {
    throw UnsupportedError("holistic (adversarial) distillation is not implemented");
  }
  throw ParameterError("unknown loss kind '" + std::string(name) + "'");
}

bool is_channelwise(LossKind kind) {
  return kind == LossKind::CwKl || kind == LossKind::CwBhattacharyya || kind == LossKind::CwL2;
}

std::string_view to_string(Target t) { return t == Target::Feature ? "feature" : "score"; }

Target parse_target(std::string_view name) {
  if (name == "feature" || name == "featuremap") return Target::Feature;
  if (name == "score" || name == "scoremap") return Target::Score;
  throw ParameterError("unknown target '" + std::string(name) + "'");
}

void LossSpec::validate() const {
  require_positive(temperature, "temperature");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ParameterError("alpha must be non-negative, got " + std::to_string(alpha));
  }
  if (kind == LossKind::AttentionTransfer && !(p >= 1.0)) {
    throw ParameterError("attention exponent p must be >= 1, got " + std::to_string(p));
  }
}

ChannelDistribution channel_distribution(const Tensor4& x, double temperature) {
  return ChannelDistribution{softmax_over_axis(x, Axis::Spatial, temperature)};
}

LossResult channelwise_kl(const Tensor4& teacher, const Tensor4& student, double temperature,
                          Reduction reduction) {
  require_pair(teacher, student, "channelwise_kl");
  Tensor4 pt, log_pt, ps, log_ps;
  softmax_with_log_over_axis(teacher, Axis::Spatial, temperature, pt, log_pt);
  softmax_with_log_over_axis(student, Axis::Spatial, temperature, ps, log_ps);
  const double scale = row_scale(student.shape(), reduction);
  const double g_scale = scale / temperature;

  LossResult r{0.0, Tensor4(student.shape())};
  auto grad = r.grad_student.data();
  const auto a = pt.data();
  const auto b = ps.data();
  const auto lt = log_pt.data();
  const auto ls = log_ps.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (a[i] > 0.0) sum += a[i] * (lt[i] - ls[i]);
    grad[i] = g_scale * (b[i] - a[i]);
  }
  r.value = scale * sum;
  return r;
}

LossResult channelwise_bhattacharyya(const Tensor4& teacher, const Tensor4& student,
                                     double temperature, Reduction reduction) {
  require_pair(teacher, student, "channelwise_bhattacharyya");
  Tensor4 pt, log_pt, ps, log_ps;
  softmax_with_log_over_axis(teacher, Axis::Spatial, temperature, pt, log_pt);
  softmax_with_log_over_axis(student, Axis::Spatial, temperature, ps, log_ps);
  const Shape4 s = student.shape();
  const double scale = row_scale(s, reduction);

  LossResult r{0.0, Tensor4(s)};
  std::vector<double> root(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto lt = log_pt.plane(n, c);
      const auto ls = log_ps.plane(n, c);
      const auto b = ps.plane(n, c);
      double coeff = 0.0;
      for (std::size_t i = 0; i < root.size(); ++i) {
        root[i] = std::exp(0.5 * (lt[i] + ls[i]));
        coeff += root[i];
      }
      r.value -= std::log(coeff);
      // d/ds_j = (pS_j - sqrt(pT_j pS_j) / BC) / (2T)
      auto g = r.grad_student.plane(n, c);
      for (std::size_t i = 0; i < root.size(); ++i) {
        g[i] = scale * 0.5 * (b[i] - root[i] / coeff) / temperature;
      }
    }
  }
  r.value *= scale;
  return r;
}

LossResult channelwise_l2(const Tensor4& teacher, const Tensor4& student, double temperature,
                          Reduction reduction) {
  require_pair(teacher, student, "channelwise_l2");
  const Tensor4 pt = softmax_over_axis(teacher, Axis::Spatial, temperature);
  const Tensor4 ps = softmax_over_axis(student, Axis::Spatial, temperature);
  const Shape4 s = student.shape();
  const double scale = row_scale(s, reduction);

  LossResult r{0.0, Tensor4(s)};
  std::vector<double> dp(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto a = pt.plane(n, c);
      const auto b = ps.plane(n, c);
      double mean_g = 0.0;
      for (std::size_t i = 0; i < dp.size(); ++i) {
        const double d = b[i] - a[i];
        r.value += d * d;
        dp[i] = 2.0 * d;
        mean_g += b[i] * dp[i];
      }
      auto g = r.grad_student.plane(n, c);
      for (std::size_t i = 0; i < dp.size(); ++i) {
        g[i] = scale * b[i] * (dp[i] - mean_g) / temperature;
      }
    }
  }
  r.value *= scale;
  return r;
}

LossResult mimic_l2(const Tensor4& teacher, const Tensor4& student) {
  require_pair(teacher, student, "mimic_l2");
  const Shape4 s = student.shape();
  const double inv = 1.0 / static_cast<double>(s.n * s.plane());
  LossResult r{0.0, Tensor4(s)};
  const auto t = teacher.data();
  const auto x = student.data();
  auto g = r.grad_student.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - t[i];
    r.value += d * d;
    g[i] = 2.0 * d * inv;
  }
  r.value *= inv;
  return r;
}

namespace {

// Flattened per-sample attention map sum_c |x_c|^p and its L2 norm.
struct Attention {
  std::vector<double> unit;
  double norm = 0.0;
};

Attention attention_map(const Tensor4& x, std::size_t n, double p) {
  const Shape4 s = x.shape();
  Attention a{std::vector<double>(s.plane(), 0.0), 0.0};
  for (std::size_t c = 0; c < s.c; ++c) {
    const auto plane = x.plane(n, c);
    for (std::size_t i = 0; i < plane.size(); ++i) a.unit[i] += std::pow(std::abs(plane[i]), p);
  }
  double sq = 0.0;
  for (double v : a.unit) sq += v * v;
  a.norm = std::sqrt(sq);
  if (!(a.norm > 0.0)) {
    throw NormalizationError("attention_transfer: all-zero attention map for sample " +
                             std::to_string(n));
  }
  for (double& v : a.unit) v /= a.norm;
  return a;
}

}  // namespace

LossResult attention_transfer(const Tensor4& teacher, const Tensor4& student, double p) {
  require_pair(teacher, student, "attention_transfer");
  if (!(p >= 1.0)) throw ParameterError("attention_transfer: p must be >= 1");
  const Shape4 s = student.shape();
  const double inv_n = 1.0 / static_cast<double>(s.n);
  LossResult r{0.0, Tensor4(s)};
  std::vector<double> g_map(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    const Attention at = attention_map(teacher, n, p);
    const Attention as = attention_map(student, n, p);
    double dot = 0.0;
    for (std::size_t i = 0; i < g_map.size(); ++i) {
      const double d = as.unit[i] - at.unit[i];
      r.value += inv_n * d * d;
      g_map[i] = 2.0 * inv_n * d;
      dot += as.unit[i] * g_map[i];
    }
    // Through the unit normalization, then through |x|^p.
    for (std::size_t i = 0; i < g_map.size(); ++i) g_map[i] = (g_map[i] - as.unit[i] * dot) / as.norm;
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto x = student.plane(n, c);
      auto g = r.grad_student.plane(n, c);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double ax = std::abs(x[i]);
        const double sign = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
        const double dpow = p == 1.0 ? 1.0 : p * std::pow(ax, p - 1.0);
        g[i] = g_map[i] * dpow * sign;
      }
    }
  }
  return r;
}

LossResult pixelwise_kl(const Tensor4& teacher, const Tensor4& student, double tau) {
  require_pair(teacher, student, "pixelwise_kl");
  Tensor4 pt, log_pt, ps, log_ps;
  softmax_with_log_over_axis(teacher, Axis::Channel, tau, pt, log_pt);
  softmax_with_log_over_axis(student, Axis::Channel, tau, ps, log_ps);
  const Shape4 s = student.shape();
  const double inv = 1.0 / static_cast<double>(s.n * s.plane());
  const double g_scale = inv / tau;
  LossResult r{0.0, Tensor4(s)};
  const auto a = pt.data();
  const auto b = ps.data();
  const auto lt = log_pt.data();
  const auto ls = log_ps.data();
  auto g = r.grad_student.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (a[i] > 0.0) r.value += a[i] * (lt[i] - ls[i]);
    g[i] = g_scale * (b[i] - a[i]);
  }
  r.value *= inv;
  return r;
}

namespace {

constexpr int kNeighbourDy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kNeighbourDx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

// Per-sample pixel-major copy (h*w rows of c values) so neighbour distances
// read contiguous memory.
std::vector<double> pixel_major(const Tensor4& t, std::size_t n) {
  const Shape4 s = t.shape();
  std::vector<double> out(s.plane() * s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    const auto plane = t.plane(n, c);
    for (std::size_t i = 0; i < s.plane(); ++i) out[i * s.c + c] = plane[i];
  }
  return out;
}

// Neighbour index of pixel (y, x) in direction k, or -1 outside the image
// (the zero-padding case).
std::ptrdiff_t neighbour(const Shape4& s, std::size_t y, std::size_t x, int k) {
  const auto yy = static_cast<std::ptrdiff_t>(y) + kNeighbourDy[k];
  const auto xx = static_cast<std::ptrdiff_t>(x) + kNeighbourDx[k];
  if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(s.h) ||
      xx >= static_cast<std::ptrdiff_t>(s.w)) {
    return -1;
  }
  return yy * static_cast<std::ptrdiff_t>(s.w) + xx;
}

// dist[i * 8 + k] = ||x_i - x_{N_k(i)}|| and map[i] = sum_k dist[i * 8 + k].
void neighbour_distances(const std::vector<double>& px, const Shape4& s, std::vector<double>& dist,
                         std::vector<double>& map) {
  dist.assign(s.plane() * 8, 0.0);
  map.assign(s.plane(), 0.0);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const std::size_t i = y * s.w + x;
      const double* xi = &px[i * s.c];
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        const std::ptrdiff_t j = neighbour(s, y, x, k);
        double sq = 0.0;
        if (j < 0) {
          for (std::size_t c = 0; c < s.c; ++c) sq += xi[c] * xi[c];
        } else {
          const double* xj = &px[static_cast<std::size_t>(j) * s.c];
          for (std::size_t c = 0; c < s.c; ++c) sq += (xi[c] - xj[c]) * (xi[c] - xj[c]);
        }
        dist[i * 8 + k] = std::sqrt(sq);
        acc += dist[i * 8 + k];
      }
      map[i] = acc;
    }
  }
}

}  // namespace

LossResult local_similarity(const Tensor4& teacher, const Tensor4& student) {
  require_pair(teacher, student, "local_similarity");
  const Shape4 s = student.shape();
  const double inv = 1.0 / static_cast<double>(s.n * s.plane());

  LossResult r{0.0, Tensor4(s)};
  std::vector<double> dist_t, map_t, dist_s, map_s;
  std::vector<double> grad_px(s.plane() * s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    neighbour_distances(pixel_major(teacher, n), s, dist_t, map_t);
    const std::vector<double> px = pixel_major(student, n);
    neighbour_distances(px, s, dist_s, map_s);
    std::fill(grad_px.begin(), grad_px.end(), 0.0);
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const std::size_t i = y * s.w + x;
        const double d = map_s[i] - map_t[i];
        r.value += d * d;
        const double g = 2.0 * d * inv;
        if (g == 0.0) continue;
        const double* xi = &px[i * s.c];
        double* gi = &grad_px[i * s.c];
        for (int k = 0; k < 8; ++k) {
          const double len = dist_s[i * 8 + k];
          if (!(len > 0.0)) continue;
          const double f = g / len;
          const std::ptrdiff_t j = neighbour(s, y, x, k);
          if (j < 0) {
            for (std::size_t c = 0; c < s.c; ++c) gi[c] += f * xi[c];
          } else {
            const double* xj = &px[static_cast<std::size_t>(j) * s.c];
            double* gj = &grad_px[static_cast<std::size_t>(j) * s.c];
            for (std::size_t c = 0; c < s.c; ++c) {
              const double u = f * (xi[c] - xj[c]);
              gi[c] += u;
              gj[c] -= u;
            }
          }
        }
      }
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      auto plane = r.grad_student.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) plane[i] = grad_px[i * s.c + c];
    }
  }
  r.value *= inv;
  return r;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pixel feature vectors of sample n as rows, scaled to unit length (zero rows stay zero).
RowMatrix unit_pixel_rows(const Tensor4& t, std::size_t n, std::vector<double>& norms) {
  const Shape4 s = t.shape();
  RowMatrix u(static_cast<Eigen::Index>(s.plane()), static_cast<Eigen::Index>(s.c));
  for (std::size_t c = 0; c < s.c; ++c) {
    const auto plane = t.plane(n, c);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = plane[i];
    }
  }
  norms.assign(s.plane(), 0.0);
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double nrm = u.row(i).norm();
    norms[static_cast<std::size_t>(i)] = nrm;
    if (nrm > 0.0) u.row(i) /= nrm;
  }
  return u;
}

}  // namespace

LossResult pairwise_affinity(const Tensor4& teacher, const Tensor4& student) {
  require_pair(teacher, student, "pairwise_affinity");
  const Shape4 s = student.shape();
  const double positions = static_cast<double>(s.plane());
  const double inv = 1.0 / (static_cast<double>(s.n) * positions * positions);

  LossResult r{0.0, Tensor4(s)};
  std::vector<double> norms_t, norms_s;
  for (std::size_t n = 0; n < s.n; ++n) {
    const RowMatrix ut = unit_pixel_rows(teacher, n, norms_t);
    const RowMatrix us = unit_pixel_rows(student, n, norms_s);
    RowMatrix diff = us * us.transpose();
    diff.noalias() -= ut * ut.transpose();
    r.value += diff.squaredNorm() * inv;
    // dL/du_k = 4/(n P^2) sum_j D_kj u_j, then through x / ||x||.
    const RowMatrix du = (4.0 * inv) * (diff * us);
    for (Eigen::Index i = 0; i < us.rows(); ++i) {
      const double nrm = norms_s[static_cast<std::size_t>(i)];
      if (!(nrm > 0.0)) continue;
      const double radial = us.row(i).dot(du.row(i));
      for (std::size_t c = 0; c < s.c; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        r.grad_student.plane(n, c)[static_cast<std::size_t>(i)] =
            (du(i, ci) - us(i, ci) * radial) / nrm;
      }
    }
  }
  return r;
}

namespace {

struct Prototypes {
  std::map<LabelMap::value_type, std::vector<double>> mean;
  std::map<LabelMap::value_type, std::size_t> count;
};

Prototypes class_prototypes(const Tensor4& t, std::size_t n, const LabelMap& labels) {
  const Shape4 s = t.shape();
  Prototypes p;
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const auto k = labels(n, y, x);
      if (k == LabelMap::kIgnore) continue;
      auto& m = p.mean[k];
      if (m.empty()) m.assign(s.c, 0.0);
      for (std::size_t c = 0; c < s.c; ++c) m[c] += t(n, c, y, x);
      ++p.count[k];
    }
  }
  for (auto& [k, m] : p.mean) {
    for (double& v : m) v /= static_cast<double>(p.count[k]);
  }
  return p;
}

double norm_of(std::span<const double> v) {
  double sq = 0.0;
  for (double e : v) sq += e * e;
  return std::sqrt(sq);
}

}  // namespace

LossResult ifvd(const Tensor4& teacher, const Tensor4& student, const LabelMap& labels) {
  require_pair(teacher, student, "ifvd");
  const Shape4 s = student.shape();
  require_labels(labels, s, "ifvd");

  std::size_t labelled = 0;
  for (auto v : labels.data()) labelled += v != LabelMap::kIgnore;
  LossResult r{0.0, Tensor4(s)};
  if (labelled == 0) return r;
  const double inv = 1.0 / static_cast<double>(labelled);

  std::vector<double> xt(s.c), xs(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    const Prototypes pt = class_prototypes(teacher, n, labels);
    const Prototypes ps = class_prototypes(student, n, labels);
    // Accumulated dL/d(prototype) per class for the student.
    std::map<LabelMap::value_type, std::vector<double>> grad_proto;
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const auto k = labels(n, y, x);
        if (k == LabelMap::kIgnore) continue;
        for (std::size_t c = 0; c < s.c; ++c) {
          xt[c] = teacher(n, c, y, x);
          xs[c] = student(n, c, y, x);
        }
        const auto& mt = pt.mean.at(k);
        const auto& ms = ps.mean.at(k);
        const double nxt = norm_of(xt), nmt = norm_of(mt);
        const double nxs = norm_of(xs), nms = norm_of(ms);
        double dot_t = 0.0, dot_s = 0.0;
        for (std::size_t c = 0; c < s.c; ++c) {
          dot_t += xt[c] * mt[c];
          dot_s += xs[c] * ms[c];
        }
        const double vt = (nxt > 0.0 && nmt > 0.0) ? dot_t / (nxt * nmt) : 0.0;
        const bool s_defined = nxs > 0.0 && nms > 0.0;
        const double vs = s_defined ? dot_s / (nxs * nms) : 0.0;
        const double d = vs - vt;
        r.value += d * d * inv;
        if (!s_defined) continue;
        const double g = 2.0 * d * inv;
        auto& gp = grad_proto[k];
        if (gp.empty()) gp.assign(s.c, 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
          // d cos(a, b)/da = b/(|a||b|) - cos * a/|a|^2, symmetric in b.
          r.grad_student(n, c, y, x) += g * (ms[c] / (nxs * nms) - vs * xs[c] / (nxs * nxs));
          gp[c] += g * (xs[c] / (nxs * nms) - vs * ms[c] / (nms * nms));
        }
      }
    }
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const auto k = labels(n, y, x);
        const auto it = grad_proto.find(k);
        if (k == LabelMap::kIgnore || it == grad_proto.end()) continue;
        const double share = 1.0 / static_cast<double>(ps.count.at(k));
        for (std::size_t c = 0; c < s.c; ++c) r.grad_student(n, c, y, x) += it->second[c] * share;
      }
    }
  }
  return r;
}

LossResult cross_entropy(const Tensor4& logits, const LabelMap& labels) {
  const Shape4 s = logits.shape();
  require_labels(labels, s, "cross_entropy");
  labels.validate(s.c);
  LossResult r{0.0, Tensor4(s)};
  std::size_t count = 0;
  for (auto v : labels.data()) count += v != LabelMap::kIgnore;
  if (count == 0) return r;
  const double inv = 1.0 / static_cast<double>(count);
  const Tensor4 logp = log_softmax_over_axis(logits, Axis::Channel, 1.0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const auto k = labels(n, y, x);
        if (k == LabelMap::kIgnore) continue;
        r.value -= logp(n, static_cast<std::size_t>(k), y, x);
        for (std::size_t c = 0; c < s.c; ++c) {
          const double onehot = static_cast<std::size_t>(k) == c ? 1.0 : 0.0;
          r.grad_student(n, c, y, x) = inv * (std::exp(logp(n, c, y, x)) - onehot);
        }
      }
    }
  }
  r.value *= inv;
  return r;
}

LossResult evaluate_loss(const LossSpec& spec, const Tensor4& teacher, const Tensor4& student,
                         const LabelMap* labels) {
  spec.validate();
  auto need_labels = [&]() -> const LabelMap& {
    if (labels == nullptr) {
      throw ParameterError(std::string(to_string(spec.kind)) + " requires a label map");
    }
    return *labels;
  };
  switch (spec.kind) {
    case LossKind::CwKl:
      return channelwise_kl(teacher, student, spec.temperature, spec.reduction);
    case LossKind::CwBhattacharyya:
      return channelwise_bhattacharyya(teacher, student, spec.temperature, spec.reduction);
    case LossKind::CwL2:
      return channelwise_l2(teacher, student, spec.temperature, spec.reduction);
    case LossKind::Mimic:
      return mimic_l2(teacher, student);
    case LossKind::AttentionTransfer:
      return attention_transfer(teacher, student, spec.p);
    case LossKind::Pixelwise:
      return pixelwise_kl(teacher, student, spec.temperature);
    case LossKind::LocalSimilarity:
      return local_similarity(teacher, student);
    case LossKind::PairwiseAffinity:
      return pairwise_affinity(teacher, student);
    case LossKind::Ifvd:
      return ifvd(teacher, student, need_labels());
    case LossKind::CrossEntropy:
      return cross_entropy(student, need_labels());
  }
  throw ParameterError("unhandled loss kind");
}

Aligner Aligner::identity(std::size_t channels) {
  Aligner a{Tensor4(Shape4{channels, channels, 1, 1}), Tensor4(Shape4{1, channels, 1, 1})};
  for (std::size_t c = 0; c < channels; ++c) a.weight(c, c, 0, 0) = 1.0;
  return a;
}

Aligner Aligner::random(Rng& rng, std::size_t c_in, std::size_t c_out) {
  Aligner a{Tensor4(Shape4{c_out, c_in, 1, 1}), Tensor4(Shape4{1, c_out, 1, 1})};
  const double scale = std::sqrt(1.0 / static_cast<double>(c_in));
  for (double& v : a.weight.data()) v = rng.uniform(-scale, scale);
  return a;
}

Tensor4 align_channels(const Tensor4& student_feat, const Aligner* aligner) {
  if (aligner == nullptr) return student_feat;
  return conv2d(student_feat, aligner->weight, aligner->bias.data(), 1, 0);
}

AlignerGrads align_channels_backward(const Tensor4& student_feat, const Aligner& aligner,
                                     const Tensor4& grad_out) {
  auto g = conv2d_backward(student_feat, aligner.weight, grad_out, 1, 0, true);
  Tensor4 gb(aligner.bias.shape(), std::move(g.grad_b));
  return AlignerGrads{std::move(g.grad_x), std::move(g.grad_w), std::move(gb)};
}

LossResult combine(std::span<const WeightedTerm> terms) {
  LossResult out;
  if (terms.empty()) return out;
  out.grad_student = Tensor4(terms.front().result.grad_student.shape());
  for (const auto& t : terms) {
    require_same_shape(out.grad_student, t.result.grad_student, "combine");
    out.value += t.spec.alpha * t.result.value;
    out.grad_student.axpy(t.spec.alpha, t.result.grad_student);
  }
  return out;
}

}  // namespace cwkd
