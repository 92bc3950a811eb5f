#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwkd/data.hpp"
#include "cwkd/losses.hpp"
#include "cwkd/models.hpp"

namespace cwkd {

struct DatasetParams {
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 4;
};

struct OptimizerParams {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t val_every = 100;
};

/// JSON schema (every field optional, defaults shown by ExperimentConfig{}):
///   seed        u64, the single top-level seed
///   dataset     {train, val, height, width, classes}
///   teacher     {width, lr, momentum, steps, batch, val_every}
///   student     {width, lr, momentum, steps, batch, val_every}
///   terms       [{kind, target, alpha, temperature, p, reduction}] with exactly one CE
///   seeds       [u64], student run indices
///   compare     {KIND: term} overrides for the per-kind specs used by compare
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetParams dataset;
  std::size_t teacher_width = 32;
  std::size_t student_width = 8;
  OptimizerParams teacher_optimizer;
  OptimizerParams optimizer;
  std::vector<LossSpec> terms;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::map<LossKind, LossSpec> compare_specs;

  /// CE (alpha 1) + CW_KL on the feature tap (alpha 35, T 1).
  static ExperimentConfig defaults();
  static ExperimentConfig from_json(const std::string& text);
  std::string to_json() const;
  /// Throws ParameterError unless exactly one CE term is present and every term is valid.
  void validate() const;
};

/// Spec used for `kind` when it is distilled on its own (compare/ablate).
LossSpec default_term(LossKind kind);
LossSpec compare_term(const ExperimentConfig& config, LossKind kind);

// Sub-seeds, all derived from the top-level seed with Rng::derive:
//   dataset                 derive(seed, "dataset")
//   teacher init / batches  derive(seed, "teacher/init"), derive(seed, "teacher/batches")
//   student run r           run = derive(seed, "run/<r>"), then derive(run, "student/init"),
//                           derive(run, "student/batches"), derive(run, "aligner/<term index>")
std::uint64_t dataset_seed(const ExperimentConfig& config);
std::uint64_t run_seed(const ExperimentConfig& config, std::uint64_t run);

struct Splits {
  Dataset train;
  Dataset val;
};
Splits make_splits(const ExperimentConfig& config);

/// v <- momentum * v + g; p <- p - lr * v. Velocity buffers start at zero.
struct SgdState {
  std::vector<Tensor4> velocity;
  std::size_t step = 0;
};
void sgd_step(std::span<Tensor4> params, std::span<const Tensor4> grads, SgdState& state,
              double lr, double momentum);

struct MetricsRow {
  std::size_t step = 0;
  std::vector<double> components;  // alpha-weighted, in column order
  double total = 0.0;
  std::optional<double> val_miou;
};

struct MetricsLog {
  std::vector<std::string> columns;  // component names, CE first
  std::vector<MetricsRow> rows;

  /// step, <components...>, total, val_mIoU
  std::string to_csv() const;
};

/// Training loss became non-finite. Carries the parameters at the failing step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step, ToyNet state)
      : std::runtime_error(what), step_(step), state_(std::move(state)) {}
  std::size_t step() const { return step_; }
  const ToyNet& state() const { return state_; }

 private:
  std::size_t step_;
  ToyNet state_;
};

double evaluate_miou(const ToyNet& net, const Dataset& ds);

struct TeacherResult {
  ToyNet net;
  double val_miou = 0.0;
  MetricsLog log;
};

/// CE-only training of a width `teacher_width` network on the config's dataset.
TeacherResult train_teacher(const ExperimentConfig& config, const Splits& splits);
TeacherResult train_teacher(const ExperimentConfig& config);

struct DistillResult {
  ToyNet student;       // final
  ToyNet best_student;  // highest val mIoU among evaluations
  std::vector<std::optional<Aligner>> aligners;  // per term; set for aligned feature terms
  double final_val_miou = 0.0;
  double best_val_miou = 0.0;
  std::size_t best_step = 0;
  MetricsLog log;
};

/// CE + weighted distillation terms into the student (and aligners) only; the
/// teacher is read-only. `initial_student` overrides the seeded initialization.
DistillResult distill(const ExperimentConfig& config, const ToyNet& teacher, const Splits& splits,
                      std::uint64_t run, const ToyNet* initial_student = nullptr);

struct AblationRow {
  std::string axis;  // "T" or "alpha"
  double value = 0.0;
  std::vector<double> miou;  // per seed
  double mean = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string to_csv(std::span<const std::uint64_t> seeds) const;
};

inline const std::vector<double> kDefaultTemperatureGrid{0.01, 0.1, 1.0, 10.0, 100.0};
inline const std::vector<double> kDefaultAlphaGrid{0.0, 5.0, 15.0, 35.0, 50.0};

/// Temperature sweep at the config's CW alpha, then alpha sweep at the config's CW
/// temperature. The grid applies to every channel-wise term in `config.terms`.
AblationTable ablate(const ExperimentConfig& config, const ToyNet& teacher, const Splits& splits,
                     std::span<const double> temperatures, std::span<const double> alphas,
                     std::size_t threads = 1);

}  // namespace cwkd
