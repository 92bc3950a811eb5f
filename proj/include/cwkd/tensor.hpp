#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace cwkd {

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

/// Cache-line aligned storage. Eigen's reductions and small products pick their
/// SIMD peeling from pointer alignment, so a fixed base alignment keeps results
/// bit-identical across allocations.
///
/// Alignment is done by hand on top of malloc: glibc's aligned allocation path
/// leaves free fragments it never reuses, and training loops that allocate
/// im2col buffers every step grew the heap without bound.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > (std::numeric_limits<std::size_t>::max() - kAlignment) / sizeof(T)) throw std::bad_alloc();
    void* raw = std::malloc(n * sizeof(T) + kAlignment);
    if (raw == nullptr) throw std::bad_alloc();
    // malloc returns at least 16-byte alignment, so the gap always fits the raw pointer.
    const auto addr = (reinterpret_cast<std::uintptr_t>(raw) + kAlignment) & ~std::uintptr_t{kAlignment - 1};
    void** aligned = reinterpret_cast<void**>(addr);
    aligned[-1] = raw;
    return reinterpret_cast<T*>(aligned);
  }
  void deallocate(T* p, std::size_t) noexcept {
    if (p != nullptr) std::free(reinterpret_cast<void**>(p)[-1]);
  }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense (n, c, h, w) tensor of doubles stored contiguously in row-major order.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  /// Throws ShapeError when data.size() != shape.size().
  Tensor4(Shape4 shape, std::vector<double> data);

  static Tensor4 zeros_like(const Tensor4& other) { return Tensor4(other.shape()); }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const Buffer& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // One (n, c) spatial plane of h*w values.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return std::span<double>(data_).subspan((n * shape_.c + c) * shape_.plane(), shape_.plane());
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return std::span<const double>(data_).subspan((n * shape_.c + c) * shape_.plane(),
                                                  shape_.plane());
  }

  Tensor4& operator+=(const Tensor4& other);
  Tensor4& operator-=(const Tensor4& other);
  Tensor4& operator*=(double k);
  /// this += k * other
  Tensor4& axpy(double k, const Tensor4& other);

 private:
  Shape4 shape_{};
  Buffer data_;
};

Tensor4 operator+(Tensor4 a, const Tensor4& b);
Tensor4 operator-(Tensor4 a, const Tensor4& b);
Tensor4 operator*(double k, Tensor4 a);

double max_abs(const Tensor4& t);
bool all_finite(const Tensor4& t);
void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

/// Per-pixel class indices, shape (n, h, w). kIgnore marks unlabeled pixels.
class LabelMap {
 public:
  using value_type = std::int32_t;
  static constexpr value_type kIgnore = std::numeric_limits<value_type>::max();

  LabelMap() = default;
  LabelMap(std::size_t n, std::size_t h, std::size_t w, value_type fill = 0);

  std::size_t n() const { return n_; }
  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t size() const { return data_.size(); }

  value_type& operator()(std::size_t n, std::size_t y, std::size_t x) {
    return data_[(n * h_ + y) * w_ + x];
  }
  value_type operator()(std::size_t n, std::size_t y, std::size_t x) const {
    return data_[(n * h_ + y) * w_ + x];
  }
  std::span<value_type> data() { return data_; }
  std::span<const value_type> data() const { return data_; }

  /// Throws ParameterError if any non-ignore value is outside [0, classes).
  void validate(std::size_t classes) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t n_ = 0, h_ = 0, w_ = 0;
  std::vector<value_type> data_;
};

enum class Axis { Channel, Spatial };

/// Softmax of x / temperature along one axis, computed with max subtraction.
/// Spatial: each (n, c) plane of h*w positions is one distribution.
/// Channel: each (n, y, x) pixel's c-vector is one distribution.
Tensor4 softmax_over_axis(const Tensor4& x, Axis axis, double temperature);
Tensor4 log_softmax_over_axis(const Tensor4& x, Axis axis, double temperature);
// Both outputs from a single pass (one exp per element).
void softmax_with_log_over_axis(const Tensor4& x, Axis axis, double temperature, Tensor4& probs,
                                Tensor4& log_probs);

struct Conv2dGrads {
  Tensor4 grad_x;  // empty when not requested
  Tensor4 grad_w;
  std::vector<double> grad_b;
};

/// Cross-correlation. weights: (c_out, c_in, k, k); bias empty or of length c_out.
Tensor4 conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias,
               std::size_t stride = 1, std::size_t pad = 0);
Conv2dGrads conv2d_backward(const Tensor4& x, const Tensor4& weights, const Tensor4& grad_out,
                            std::size_t stride = 1, std::size_t pad = 0, bool need_grad_x = true);

Tensor4 relu(const Tensor4& x);
/// Passes grad_out where x > 0.
Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out);

/// Bilinear resize by an integer factor, align_corners=false:
///   src = (dst + 0.5) / factor - 0.5, clamped to [0, size-1] before interpolation.
Tensor4 bilinear_upsample(const Tensor4& x, std::size_t factor);

enum class ReduceOp { Sum, Mean, Max };
/// Reduces over the listed axes (0=n, 1=c, 2=h, 3=w); reduced axes keep extent 1.
Tensor4 reduce(const Tensor4& x, ReduceOp op, std::span<const int> axes);

}  // namespace cwkd
