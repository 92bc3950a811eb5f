#include "cwkd/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cwkd/errors.hpp"

namespace cwkd {

std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
  return os.str();
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data)
    : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

Tensor4& Tensor4::operator+=(const Tensor4& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor4& Tensor4::operator-=(const Tensor4& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor4& Tensor4::operator*=(double k) {
  for (auto& v : data_) v *= k;
  return *this;
}

Tensor4& Tensor4::axpy(double k, const Tensor4& other) {
  require_same_shape(*this, other, "axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += k * other.data_[i];
  return *this;
}

Tensor4 operator+(Tensor4 a, const Tensor4& b) { return a += b; }
Tensor4 operator-(Tensor4 a, const Tensor4& b) { return a -= b; }
Tensor4 operator*(double k, Tensor4 a) { return a *= k; }

double max_abs(const Tensor4& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor4& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

LabelMap::LabelMap(std::size_t n, std::size_t h, std::size_t w, value_type fill)
    : n_(n), h_(h), w_(w), data_(n * h * w, fill) {}

void LabelMap::validate(std::size_t classes) const {
  for (value_type v : data_) {
    if (v == kIgnore) continue;
    if (v < 0 || static_cast<std::size_t>(v) >= classes) {
      throw ParameterError("label " + std::to_string(v) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
  }
}

namespace {

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be positive and finite, got " +
                         std::to_string(temperature));
  }
}

// Visits every softmax slice as (base offset, stride, length).
template <typename Fn>
void for_each_slice(const Shape4& s, Axis axis, Fn&& fn) {
  if (axis == Axis::Spatial) {
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) fn(nc * s.plane(), std::size_t{1}, s.plane());
  } else {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t p = 0; p < s.plane(); ++p) fn(n * s.c * s.plane() + p, s.plane(), s.c);
    }
  }
}

}  // namespace

void softmax_with_log_over_axis(const Tensor4& x, Axis axis, double temperature, Tensor4& probs,
                                Tensor4& log_probs) {
  require_temperature(temperature);
  probs = Tensor4(x.shape());
  log_probs = Tensor4(x.shape());
  const double inv_t = 1.0 / temperature;
  const auto in = x.data();
  auto p = probs.data();
  auto lp = log_probs.data();
  for_each_slice(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, in[base + k * stride] * inv_t);
    double sum = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t i = base + k * stride;
      lp[i] = in[i] * inv_t - mx;
      p[i] = std::exp(lp[i]);
      sum += p[i];
    }
    const double inv_sum = 1.0 / sum;
    const double log_sum = std::log(sum);
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t i = base + k * stride;
      p[i] *= inv_sum;
      lp[i] -= log_sum;
    }
  });
}

Tensor4 log_softmax_over_axis(const Tensor4& x, Axis axis, double temperature) {
  Tensor4 p, lp;
  softmax_with_log_over_axis(x, axis, temperature, p, lp);
  return lp;
}

Tensor4 softmax_over_axis(const Tensor4& x, Axis axis, double temperature) {
  Tensor4 p, lp;
  softmax_with_log_over_axis(x, axis, temperature, p, lp);
  return p;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t c_in, c_out, k, stride, pad, h, w, oh, ow;
};

ConvGeometry conv_geometry(const Shape4& x, const Shape4& wt, std::size_t stride, std::size_t pad) {
  if (wt.h != wt.w) throw ShapeError("conv2d: kernel must be square, got " + to_string(wt));
  if (wt.c != x.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, weights expect " +
                     std::to_string(wt.c));
  }
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  if (x.h + 2 * pad < wt.h || x.w + 2 * pad < wt.w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  ConvGeometry g{x.c, wt.n, wt.h, stride, pad, x.h, x.w, 0, 0};
  g.oh = (x.h + 2 * pad - wt.h) / stride + 1;
  g.ow = (x.w + 2 * pad - wt.w) / stride + 1;
  return g;
}

// Column matrix for one sample: rows (ci, ky, kx), columns (oy, ox).
void im2col(const double* src, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const double* plane = src + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((ci * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          double* out = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.ow, 0.0);
            continue;
          }
          const double* in_row = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : in_row[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dst) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    double* plane = dst + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* out_row = plane + static_cast<std::size_t>(iy) * g.w;
          const double* in = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
              out_row[static_cast<std::size_t>(ix)] += in[ox];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

Tensor4 conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias,
               std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x.shape(), weights.shape(), stride, pad);
  if (!bias.empty() && bias.size() != g.c_out) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " != c_out " +
                     std::to_string(g.c_out));
  }
  const std::size_t n = x.shape().n;
  const std::size_t rows = g.c_in * g.k * g.k;
  const std::size_t cols = g.oh * g.ow;
  Tensor4 out(Shape4{n, g.c_out, g.oh, g.ow});
  const ConstMatMap w(weights.data().data(), static_cast<Eigen::Index>(g.c_out),
                      static_cast<Eigen::Index>(rows));
  Buffer col(is_pointwise(g) ? 0 : rows * cols);
  for (std::size_t s = 0; s < n; ++s) {
    const double* src = x.data().data() + s * g.c_in * g.h * g.w;
    if (!is_pointwise(g)) {
      im2col(src, g, col.data());
      src = col.data();
    }
    MatMap dst(out.data().data() + s * g.c_out * cols, static_cast<Eigen::Index>(g.c_out),
               static_cast<Eigen::Index>(cols));
    dst.noalias() = w * ConstMatMap(src, static_cast<Eigen::Index>(rows),
                                    static_cast<Eigen::Index>(cols));
    if (!bias.empty()) {
      for (std::size_t co = 0; co < g.c_out; ++co) dst.row(static_cast<Eigen::Index>(co)).array() += bias[co];
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor4& x, const Tensor4& weights, const Tensor4& grad_out,
                            std::size_t stride, std::size_t pad, bool need_grad_x) {
  const auto g = conv_geometry(x.shape(), weights.shape(), stride, pad);
  const std::size_t n = x.shape().n;
  if (grad_out.shape() != Shape4{n, g.c_out, g.oh, g.ow}) {
    throw ShapeError("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                     " does not match conv output " + to_string(Shape4{n, g.c_out, g.oh, g.ow}));
  }
  const std::size_t rows = g.c_in * g.k * g.k;
  const std::size_t cols = g.oh * g.ow;

  Conv2dGrads grads;
  grads.grad_w = Tensor4(weights.shape());
  grads.grad_b.assign(g.c_out, 0.0);
  if (need_grad_x) grads.grad_x = Tensor4(x.shape());

  const ConstMatMap w(weights.data().data(), static_cast<Eigen::Index>(g.c_out),
                      static_cast<Eigen::Index>(rows));
  MatMap gw(grads.grad_w.data().data(), static_cast<Eigen::Index>(g.c_out),
            static_cast<Eigen::Index>(rows));
  Buffer col(is_pointwise(g) ? 0 : rows * cols);
  Buffer grad_col(need_grad_x && !is_pointwise(g) ? rows * cols : 0);

  for (std::size_t s = 0; s < n; ++s) {
    const double* src = x.data().data() + s * g.c_in * g.h * g.w;
    if (!is_pointwise(g)) {
      im2col(src, g, col.data());
      src = col.data();
    }
    const ConstMatMap go(grad_out.data().data() + s * g.c_out * cols,
                         static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(cols));
    gw.noalias() += go * ConstMatMap(src, static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols))
                             .transpose();
    for (std::size_t co = 0; co < g.c_out; ++co) {
      grads.grad_b[co] += go.row(static_cast<Eigen::Index>(co)).sum();
    }
    if (need_grad_x) {
      double* gx = grads.grad_x.data().data() + s * g.c_in * g.h * g.w;
      if (is_pointwise(g)) {
        MatMap(gx, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).noalias() =
            w.transpose() * go;
      } else {
        MatMap(grad_col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
            .noalias() = w.transpose() * go;
        col2im(grad_col.data(), g, gx);
      }
    }
  }
  return grads;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 out(x.shape());
  auto dst = out.data();
  const auto src = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor4 out(x.shape());
  auto dst = out.data();
  const auto src = x.data();
  const auto go = grad_out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? go[i] : 0.0;
  return out;
}

Tensor4 bilinear_upsample(const Tensor4& x, std::size_t factor) {
  if (factor == 0) throw ParameterError("bilinear_upsample: factor must be positive");
  if (factor == 1) return x;
  const Shape4 in = x.shape();
  Tensor4 out(Shape4{in.n, in.c, in.h * factor, in.w * factor});
  const double f = static_cast<double>(factor);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [f](std::size_t out_len, std::size_t in_len) {
    std::vector<Tap> t(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
      double src = (static_cast<double>(o) + 0.5) / f - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_len - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in_len - 1);
      t[o] = Tap{lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(out.shape().h, in.h);
  const auto tx = taps(out.shape().w, in.w);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t oy = 0; oy < ty.size(); ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < tx.size(); ++ox) {
          const auto& b = tx[ox];
          const double top = x(n, c, a.lo, b.lo) * (1.0 - b.frac) + x(n, c, a.lo, b.hi) * b.frac;
          const double bot = x(n, c, a.hi, b.lo) * (1.0 - b.frac) + x(n, c, a.hi, b.hi) * b.frac;
          out(n, c, oy, ox) = top * (1.0 - a.frac) + bot * a.frac;
        }
      }
    }
  }
  return out;
}

Tensor4 reduce(const Tensor4& x, ReduceOp op, std::span<const int> axes) {
  if (axes.empty()) throw ParameterError("reduce: no axes given");
  const Shape4 in = x.shape();
  const std::size_t ext[4] = {in.n, in.c, in.h, in.w};
  bool reduced[4] = {false, false, false, false};
  for (int a : axes) {
    if (a < 0 || a > 3) throw ParameterError("reduce: axis out of range");
    if (ext[a] == 0) throw ParameterError("reduce: empty reduction axis");
    reduced[a] = true;
  }
  const Shape4 os{reduced[0] ? 1 : in.n, reduced[1] ? 1 : in.c, reduced[2] ? 1 : in.h,
                  reduced[3] ? 1 : in.w};
  const double init = op == ReduceOp::Max ? -std::numeric_limits<double>::infinity() : 0.0;
  Tensor4 out(os, init);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t y = 0; y < in.h; ++y) {
        for (std::size_t xx = 0; xx < in.w; ++xx) {
          double& dst = out(reduced[0] ? 0 : n, reduced[1] ? 0 : c, reduced[2] ? 0 : y,
                            reduced[3] ? 0 : xx);
          const double v = x(n, c, y, xx);
          dst = op == ReduceOp::Max ? std::max(dst, v) : dst + v;
        }
      }
    }
  }
  if (op == ReduceOp::Mean) {
    const double count = static_cast<double>(in.size()) / static_cast<double>(os.size());
    out *= 1.0 / count;
  }
  return out;
}

}  // namespace cwkd
