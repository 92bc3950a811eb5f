#pragma once

// Library entry points behind the `cwkd` subcommands. Each function writes its
// artifacts plus a manifest.json into `out` and returns the in-memory result,
// so tests and the Python bindings can drive the same code paths as the CLI.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwkd/gradcheck.hpp"
#include "cwkd/losses.hpp"
#include "cwkd/models.hpp"
#include "cwkd/trainer.hpp"

namespace cwkd {

namespace fs = std::filesystem;

/// Thrown for bad invocations (missing teacher, unknown loss names, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kToolVersion = "1.0.0";

/// Loss kinds run by `compare` when no --losses list is given.
inline constexpr std::array<LossKind, 9> kCompareKinds = {
    LossKind::Mimic,    LossKind::AttentionTransfer, LossKind::Pixelwise,
    LossKind::LocalSimilarity, LossKind::PairwiseAffinity, LossKind::Ifvd,
    LossKind::CwKl,     LossKind::CwBhattacharyya,   LossKind::CwL2};

/// Parses "CW_KL,PA" style lists. Empty input yields an empty list.
std::vector<LossKind> parse_loss_list(std::string_view text);
std::vector<double> parse_number_list(std::string_view text);

/// manifest.json: command, tool version, full config, top-level and derived
/// seeds, library versions and the list of artifacts written.
void write_manifest(const fs::path& out, std::string_view command, const ExperimentConfig& config,
                    std::span<const std::string> artifacts, const std::string& extra_json = "{}");

// gen-data: dataset/ with the train split followed by the val split.
Dataset run_gen_data(const ExperimentConfig& config, const fs::path& out);

// gradcheck: gradcheck.json. The caller maps !report.pass() to a non-zero exit.
GradCheckReport run_gradcheck(std::uint64_t seed, std::span<const Shape4> shapes, double tolerance,
                              const fs::path& out);
inline const std::vector<Shape4> kDefaultGradcheckShapes{{1, 2, 3, 3}, {2, 4, 5, 6}};

// train-teacher: teacher/ checkpoint and teacher_metrics.csv.
TeacherResult run_train_teacher(const ExperimentConfig& config, const fs::path& out);

// distill: per seed r, student_r/ (final), student_r_best/ and metrics_r.csv;
// summary.csv with best and final val mIoU per seed.
std::vector<DistillResult> run_distill(const ExperimentConfig& config, const ToyNet& teacher,
                                       const fs::path& out, std::size_t threads = 1);

struct CompareRow {
  std::string loss;    // "CE" for the undistilled baseline
  std::string target;  // "feature", "score" or "-"
  std::vector<double> miou;  // best val mIoU per seed
  double mean = 0.0;
  double std = 0.0;    // sample standard deviation
  double delta = 0.0;  // mean minus the baseline mean
  std::string complexity;
};

struct CompareTable {
  std::vector<std::uint64_t> seeds;
  std::vector<CompareRow> rows;  // baseline first

  std::string to_csv() const;
  const CompareRow* find(std::string_view loss) const;
};

// compare: compare.csv plus dumps/<LOSS>_seed<r>.cwt holding the spatial
// distributions of each best student's score map on the first val batch.
CompareTable run_compare(const ExperimentConfig& config, const ToyNet& teacher,
                         std::span<const LossKind> kinds, const fs::path& out,
                         std::size_t threads = 1);

// ablate: ablation.csv over the temperature and alpha grids.
AblationTable run_ablate(const ExperimentConfig& config, const ToyNet& teacher,
                         std::span<const double> temperatures, std::span<const double> alphas,
                         const fs::path& out, std::size_t threads = 1);

struct ComplexityRow {
  std::string loss;
  std::string term;
  std::optional<std::uint64_t> exact;
  double value = 0.0;
};

/// Every in-scope distillation loss at (h, w, c, n, p), plus HO marked unsupported.
std::vector<ComplexityRow> complexity_table(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                            std::uint64_t n, double p);
std::string complexity_csv(std::span<const ComplexityRow> rows);
std::vector<ComplexityRow> run_complexity(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                          std::uint64_t n, double p, const fs::path& out);

/// Spatial softmax per (sample, channel) of a tap; what dump-channels writes.
Tensor4 channel_dump(const Tensor4& tap, double temperature);

struct ChannelDumps {
  Tensor4 feature;
  Tensor4 score;
};

// dump-channels: feature_channels.cwt and score_channels.cwt for `images`.
ChannelDumps run_dump_channels(const ExperimentConfig& config, const ToyNet& net,
                               const Tensor4& images, double temperature, const fs::path& out);

/// Images used by dump-channels when no dataset directory is given: the first
/// `count` validation scenes of the config's dataset.
Tensor4 default_dump_batch(const ExperimentConfig& config, std::size_t count = 8);

}  // namespace cwkd
