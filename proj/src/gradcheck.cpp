#include "cwkd/gradcheck.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "cwkd/errors.hpp"
#include "cwkd/losses.hpp"
#include "cwkd/rng.hpp"

namespace cwkd {

Tensor4 finite_diff_grad(const ScalarFn& f, const Tensor4& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ParameterError("finite_diff_grad: eps must lie in [1e-7, 1e-3]");
  }
  Tensor4 probe = x;
  Tensor4 grad(x.shape());
  auto p = probe.data();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double orig = p[k];
    p[k] = orig + eps;
    const double up = f(probe);
    p[k] = orig - eps;
    const double down = f(probe);
    p[k] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleError("finite_diff_grad: non-finite evaluation at coordinate " +
                        std::to_string(k));
    }
    grad[k] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradDiff compare_gradients(const Tensor4& analytic, const Tensor4& numeric) {
  require_same_shape(analytic, numeric, "compare_gradients");
  GradDiff d;
  const Shape4 s = analytic.shape();
  std::size_t worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    if (i == 0 || e > d.max_rel_error) {
      d.max_rel_error = e;
      worst = i;
    }
  }
  const std::size_t plane = s.plane();
  d.worst = {worst / (s.c * plane), (worst / plane) % s.c, (worst / s.w) % s.h, worst % s.w};
  return d;
}

bool GradCheckReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

std::string GradCheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["pass"] = pass();
  j["losses"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    j["losses"].push_back({{"loss", e.name},
                           {"max_rel_error", e.max_rel_error},
                           {"worst_index", e.worst},
                           {"worst_shape", {e.worst_shape.n, e.worst_shape.c, e.worst_shape.h,
                                            e.worst_shape.w}},
                           {"instances", e.instances},
                           {"pass", e.pass}});
  }
  return j.dump(2);
}

namespace {

Tensor4 random_tensor(Rng& rng, Shape4 s) {
  Tensor4 t(s);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

LabelMap random_labels(Rng& rng, Shape4 s, std::size_t classes, bool with_ignore) {
  LabelMap l(s.n, s.h, s.w);
  for (auto& v : l.data()) {
    if (with_ignore && rng.uniform() < 0.1) {
      v = LabelMap::kIgnore;
    } else {
      v = static_cast<LabelMap::value_type>(rng.below(classes));
    }
  }
  return l;
}

}  // namespace

GradCheckReport check_all_losses(std::uint64_t seed, std::span<const Shape4> shapes,
                                 double tolerance, std::size_t instances, double eps) {
  if (!(tolerance >= 0.0)) throw ParameterError("check_all_losses: tolerance must be >= 0");
  GradCheckReport report{seed, tolerance, {}};
  if (shapes.empty()) return report;
  for (LossKind kind : kAllLossKinds) {
    GradCheckEntry entry{std::string(to_string(kind))};
    Rng rng(Rng::derive(seed, entry.name));
    for (const Shape4& shape : shapes) {
      for (std::size_t k = 0; k < instances; ++k) {
        const Tensor4 teacher = random_tensor(rng, shape);
        const Tensor4 student = random_tensor(rng, shape);
        const LabelMap labels =
            random_labels(rng, shape, kind == LossKind::CrossEntropy ? shape.c : 3,
                          true);
        LossSpec spec{kind};
        const auto f = [&](const Tensor4& s) {
          return evaluate_loss(spec, teacher, s, &labels).value;
        };
        const Tensor4 analytic = evaluate_loss(spec, teacher, student, &labels).grad_student;
        const GradDiff d = compare_gradients(analytic, finite_diff_grad(f, student, eps));
        if (d.max_rel_error > entry.max_rel_error || entry.instances == 0) {
          entry.max_rel_error = d.max_rel_error;
          entry.worst = d.worst;
          entry.worst_shape = shape;
        }
        ++entry.instances;
      }
    }
    entry.pass = entry.max_rel_error < tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cwkd
