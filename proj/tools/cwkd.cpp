// cwkd: command-line driver for data generation, gradient checks, training,
// distillation, comparison, ablation, complexity reports and channel dumps.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "cwkd/commands.hpp"
#include "cwkd/data.hpp"
#include "cwkd/errors.hpp"
#include "cwkd/io.hpp"
#include "cwkd/metrics.hpp"
#include "cwkd/parallel.hpp"

namespace {

using namespace cwkd;

enum ExitCode : int { kOk = 0, kFailed = 1, kUsage = 2, kError = 3 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "cwkd_out";
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) cmd->add_option("--config", c.config_path, "Experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "Top-level seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig::defaults()
                                               : ExperimentConfig::from_json(read_text(c.config_path));
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

ToyNet load_teacher(const std::string& path) {
  if (path.empty()) throw UsageError("a teacher checkpoint is required (--teacher <dir>)");
  if (!std::filesystem::exists(std::filesystem::path(path) / "manifest.json")) {
    throw UsageError("no teacher checkpoint at '" + path + "' (run train-teacher first)");
  }
  return load_checkpoint(path);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-wise knowledge distillation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Common common;
  std::string teacher_path, losses_text, grid_t_text, grid_alpha_text, checkpoint_path, data_dir;
  double tolerance = 1e-4;
  double temperature = 1.0;
  std::uint64_t h = 64, w = 64, c = 32, n = 4;
  double p = 2.0;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_common(gen, common);

  auto* grad = app.add_subcommand("gradcheck", "Check every analytic loss gradient against finite differences");
  add_common(grad, common, false);
  grad->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

  auto* teach = app.add_subcommand("train-teacher", "Train the teacher with cross-entropy");
  add_common(teach, common);

  auto* dist = app.add_subcommand("distill", "Distill the configured loss terms into students");
  add_common(dist, common);
  dist->add_option("--teacher", teacher_path, "Teacher checkpoint directory");

  auto* cmp = app.add_subcommand("compare", "Distill each loss kind on its own and tabulate mIoU");
  add_common(cmp, common);
  cmp->add_option("--teacher", teacher_path, "Teacher checkpoint directory");
  cmp->add_option("--losses", losses_text, "Comma-separated loss kinds (default: all)");

  auto* abl = app.add_subcommand("ablate", "Sweep temperature and alpha of the channel-wise term");
  add_common(abl, common);
  abl->add_option("--teacher", teacher_path, "Teacher checkpoint directory");
  abl->add_option("--grid-T", grid_t_text, "Comma-separated temperatures");
  abl->add_option("--grid-alpha", grid_alpha_text, "Comma-separated loss weights");

  auto* cx = app.add_subcommand("complexity", "Print leading-order loss costs");
  cx->add_option("--out", common.out, "Output directory")->capture_default_str();
  cx->add_option("--height", h, "Tap height h_x")->capture_default_str();
  cx->add_option("--width", w, "Tap width w_x")->capture_default_str();
  cx->add_option("--channels", c, "Tap channels c_x")->capture_default_str();
  cx->add_option("--classes", n, "Number of classes n")->capture_default_str();
  cx->add_option("--p", p, "AT exponent p")->capture_default_str();

  auto* dump = app.add_subcommand("dump-channels", "Write per-channel spatial distributions of a network");
  add_common(dump, common);
  dump->add_option("--checkpoint", checkpoint_path, "Network checkpoint directory")->required();
  dump->add_option("--data", data_dir, "Dataset directory (default: first val scenes of the config)");
  dump->add_option("--temperature", temperature, "Softmax temperature")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  const std::size_t threads = thread_budget();
  const std::filesystem::path out(common.out);

  try {
    if (gen->parsed()) {
      const Dataset ds = run_gen_data(load_config(common), out);
      std::cout << "wrote " << ds.size() << " scenes to " << (out / "dataset").string() << "\n";
    } else if (grad->parsed()) {
      if (!(tolerance >= 0.0)) throw UsageError("--tolerance must be >= 0");
      const auto report = run_gradcheck(common.seed.value_or(0), kDefaultGradcheckShapes, tolerance, out);
      std::cout << report.to_json() << "\n";
      return report.pass() ? kOk : kFailed;
    } else if (teach->parsed()) {
      const auto r = run_train_teacher(load_config(common), out);
      std::cout << "teacher val mIoU " << fmt(r.val_miou) << "\n";
    } else if (dist->parsed()) {
      const ExperimentConfig cfg = load_config(common);
      const auto results = run_distill(cfg, load_teacher(teacher_path), out, threads);
      for (std::size_t i = 0; i < results.size(); ++i) {
        std::cout << "seed " << cfg.seeds[i] << " best val mIoU " << fmt(results[i].best_val_miou)
                  << " (step " << results[i].best_step << ")\n";
      }
    } else if (cmp->parsed()) {
      const ExperimentConfig cfg = load_config(common);
      const ToyNet teacher = load_teacher(teacher_path);
      std::vector<LossKind> kinds = parse_loss_list(losses_text);
      if (losses_text.empty()) kinds.assign(kCompareKinds.begin(), kCompareKinds.end());
      if (kinds.empty()) throw UsageError("--losses selected no loss kinds");
      const CompareTable table = run_compare(cfg, teacher, kinds, out, threads);
      std::cout << table.to_csv();
    } else if (abl->parsed()) {
      const ExperimentConfig cfg = load_config(common);
      const ToyNet teacher = load_teacher(teacher_path);
      const auto ts = grid_t_text.empty() ? kDefaultTemperatureGrid : parse_number_list(grid_t_text);
      const auto as = grid_alpha_text.empty() ? kDefaultAlphaGrid : parse_number_list(grid_alpha_text);
      const AblationTable table = run_ablate(cfg, teacher, ts, as, out, threads);
      std::cout << table.to_csv(cfg.seeds);
    } else if (cx->parsed()) {
      const auto rows = run_complexity(h, w, c, n, p, out);
      std::cout << complexity_csv(rows);
    } else if (dump->parsed()) {
      const ExperimentConfig cfg = load_config(common);
      const ToyNet net = load_checkpoint(checkpoint_path);
      const Tensor4 images = data_dir.empty() ? default_dump_batch(cfg) : load_dataset(data_dir).images;
      run_dump_channels(cfg, net, images, temperature, out);
      std::cout << "wrote " << (out / "feature_channels.cwt").string() << " and "
                << (out / "score_channels.cwt").string() << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const UnsupportedError& e) {
    std::cerr << "unsupported: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << "\n";
    try {
      save_checkpoint(e.state(), out / "diverged_state");
      std::cerr << "state written to " << (out / "diverged_state").string() << "\n";
    } catch (const std::exception&) {
    }
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kOk;
}
