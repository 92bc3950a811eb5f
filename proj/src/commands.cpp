#include "cwkd/commands.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cwkd/data.hpp"
#include "cwkd/errors.hpp"
#include "cwkd/io.hpp"
#include "cwkd/metrics.hpp"
#include "cwkd/parallel.hpp"
#include "cwkd/rng.hpp"

namespace cwkd {

namespace {

using json = nlohmann::ordered_json;

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    std::string item = trim(text.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir.string() + ": " + ec.message());
}

double sample_std(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string seed_label(std::uint64_t s) { return "seed" + std::to_string(s); }

}  // namespace

std::vector<LossKind> parse_loss_list(std::string_view text) {
  std::vector<LossKind> out;
  for (const auto& name : split_commas(text)) {
    try {
      out.push_back(parse_loss_kind(name));
    } catch (const ParameterError& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

std::vector<double> parse_number_list(std::string_view text) {
  std::vector<double> out;
  for (const auto& item : split_commas(text)) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw UsageError("not a number: '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

void write_manifest(const fs::path& out, std::string_view command, const ExperimentConfig& config,
                    std::span<const std::string> artifacts, const std::string& extra_json) {
  ensure_dir(out);
  json m;
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["seed"] = config.seed;
  json derived;
  derived["dataset"] = dataset_seed(config);
  derived["teacher_init"] = Rng::derive(config.seed, "teacher/init");
  derived["teacher_batches"] = Rng::derive(config.seed, "teacher/batches");
  json runs = json::object();
  for (auto r : config.seeds) runs[std::to_string(r)] = run_seed(config, r);
  derived["runs"] = runs;
  m["derived_seeds"] = derived;
  m["config"] = json::parse(config.to_json());
  m["parameters"] = json::parse(extra_json);
  m["versions"] = {
      {"cwkd", kToolVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
      {"tensor_format", "CWT1"}};
  m["artifacts"] = json(std::vector<std::string>(artifacts.begin(), artifacts.end()));
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

Dataset run_gen_data(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const auto& d = config.dataset;
  // Same stream make_splits draws from: train scenes first, then val.
  Dataset ds = generate(dataset_seed(config), d.train + d.val, d.height, d.width, d.classes);
  save_dataset(ds, out / "dataset");
  const std::vector<std::string> artifacts{"dataset/index.json", "dataset/images.cwt",
                                           "dataset/labels.cwt"};
  json extra;
  extra["train_scenes"] = d.train;
  extra["val_scenes"] = d.val;
  write_manifest(out, "gen-data", config, artifacts, extra.dump());
  return ds;
}

GradCheckReport run_gradcheck(std::uint64_t seed, std::span<const Shape4> shapes, double tolerance,
                              const fs::path& out) {
  GradCheckReport report = check_all_losses(seed, shapes, tolerance);
  ensure_dir(out);
  write_text(out / "gradcheck.json", report.to_json() + "\n");
  ExperimentConfig config = ExperimentConfig::defaults();
  config.seed = seed;
  json extra;
  extra["tolerance"] = tolerance;
  json js = json::array();
  for (const auto& s : shapes) js.push_back({s.n, s.c, s.h, s.w});
  extra["shapes"] = js;
  const std::vector<std::string> artifacts{"gradcheck.json"};
  write_manifest(out, "gradcheck", config, artifacts, extra.dump());
  return report;
}

TeacherResult run_train_teacher(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  TeacherResult r = train_teacher(config);
  save_checkpoint(r.net, out / "teacher");
  write_text(out / "teacher_metrics.csv", r.log.to_csv());
  json extra;
  extra["val_mIoU"] = r.val_miou;
  extra["parameters"] = count_params(r.net);
  const std::vector<std::string> artifacts{"teacher/manifest.json", "teacher_metrics.csv"};
  write_manifest(out, "train-teacher", config, artifacts, extra.dump());
  return r;
}

std::vector<DistillResult> run_distill(const ExperimentConfig& config, const ToyNet& teacher,
                                       const fs::path& out, std::size_t threads) {
  config.validate();
  const Splits splits = make_splits(config);
  std::vector<DistillResult> results(config.seeds.size());
  parallel_for(results.size(), threads, [&](std::size_t i) {
    results[i] = distill(config, teacher, splits, config.seeds[i]);
  });

  ensure_dir(out);
  std::vector<std::string> artifacts;
  std::string summary = "seed,best_val_mIoU,best_step,final_val_mIoU\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto r = config.seeds[i];
    const std::string tag = std::to_string(r);
    save_checkpoint(results[i].student, out / ("student_" + tag));
    save_checkpoint(results[i].best_student, out / ("student_" + tag + "_best"));
    write_text(out / ("metrics_" + tag + ".csv"), results[i].log.to_csv());
    artifacts.push_back("student_" + tag + "/manifest.json");
    artifacts.push_back("student_" + tag + "_best/manifest.json");
    artifacts.push_back("metrics_" + tag + ".csv");
    summary += tag + "," + fixed(results[i].best_val_miou) + "," +
               std::to_string(results[i].best_step) + "," + fixed(results[i].final_val_miou) + "\n";
  }
  write_text(out / "summary.csv", summary);
  artifacts.push_back("summary.csv");
  write_manifest(out, "distill", config, artifacts);
  return results;
}

std::string CompareTable::to_csv() const {
  std::string out = "loss,target";
  for (auto s : seeds) out += "," + seed_label(s);
  out += ",mean,std,delta,complexity\n";
  for (const auto& r : rows) {
    out += r.loss + "," + r.target;
    for (double m : r.miou) out += "," + fixed(m);
    out += "," + fixed(r.mean) + "," + fixed(r.std) + "," + fixed(r.delta) + "," + r.complexity + "\n";
  }
  return out;
}

const CompareRow* CompareTable::find(std::string_view loss) const {
  for (const auto& r : rows) {
    if (r.loss == loss) return &r;
  }
  return nullptr;
}

CompareTable run_compare(const ExperimentConfig& config, const ToyNet& teacher,
                         std::span<const LossKind> kinds, const fs::path& out,
                         std::size_t threads) {
  config.validate();
  for (LossKind k : kinds) {
    if (k == LossKind::CrossEntropy) throw UsageError("compare: CE is the baseline, not a loss to compare");
  }
  const Splits splits = make_splits(config);

  struct Variant {
    std::string name;
    ExperimentConfig cfg;
    std::optional<LossSpec> term;
  };
  std::vector<Variant> variants;
  ExperimentConfig base = config;
  base.terms = {default_term(LossKind::CrossEntropy)};
  for (const auto& t : config.terms) {
    if (t.kind == LossKind::CrossEntropy) base.terms = {t};
  }
  variants.push_back({"CE", base, std::nullopt});
  for (LossKind k : kinds) {
    ExperimentConfig c = base;
    const LossSpec term = compare_term(config, k);
    c.terms.push_back(term);
    variants.push_back({std::string(to_string(k)), c, term});
  }

  const std::size_t per = config.seeds.size();
  std::vector<DistillResult> runs(variants.size() * per);
  parallel_for(runs.size(), threads, [&](std::size_t i) {
    runs[i] = distill(variants[i / per].cfg, teacher, splits, config.seeds[i % per]);
  });

  const std::size_t dump_count = std::min<std::size_t>(8, splits.val.size());
  std::vector<std::size_t> dump_idx(dump_count);
  std::iota(dump_idx.begin(), dump_idx.end(), 0);
  const Tensor4 dump_images = gather_images(splits.val, dump_idx);

  ensure_dir(out / "dumps");
  ensure_dir(out / "runs");
  std::vector<std::string> artifacts;
  CompareTable table;
  table.seeds = config.seeds;
  const std::size_t h = config.dataset.height, w = config.dataset.width;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const Variant& var = variants[v];
    CompareRow row;
    row.loss = var.name;
    row.target = var.term ? std::string(to_string(var.term->target)) : "-";
    for (std::size_t s = 0; s < per; ++s) {
      const DistillResult& r = runs[v * per + s];
      row.miou.push_back(r.best_val_miou);
      const std::string stem = var.name + "_" + seed_label(config.seeds[s]);
      write_text(out / "runs" / (stem + ".csv"), r.log.to_csv());
      if (dump_count > 0) {
        const double t = var.term && (is_channelwise(var.term->kind)) ? var.term->temperature : 1.0;
        write_cwt1(out / "dumps" / (stem + ".cwt"),
                   channel_dump(forward(r.best_student, dump_images).score, t));
        artifacts.push_back("dumps/" + stem + ".cwt");
      }
      artifacts.push_back("runs/" + stem + ".csv");
    }
    row.mean = per == 0 ? 0.0 : std::accumulate(row.miou.begin(), row.miou.end(), 0.0) / per;
    row.std = sample_std(row.miou, row.mean);
    if (var.term) {
      const std::size_t c = var.term->target == Target::Feature ? config.teacher_width
                                                                 : config.dataset.classes;
      const ComplexityReport cr =
          complexity(var.term->kind, h, w, c, config.dataset.classes, var.term->p);
      row.complexity = cr.term + "=" + (cr.exact ? std::to_string(*cr.exact) : fixed(cr.value, 1));
    } else {
      row.complexity = "-";
    }
    table.rows.push_back(std::move(row));
  }
  const double base_mean = table.rows.front().mean;
  for (auto& r : table.rows) r.delta = r.mean - base_mean;

  write_text(out / "compare.csv", table.to_csv());
  artifacts.insert(artifacts.begin(), "compare.csv");
  json extra;
  json names = json::array();
  for (LossKind k : kinds) names.push_back(to_string(k));
  extra["losses"] = names;
  write_manifest(out, "compare", config, artifacts, extra.dump());
  return table;
}

AblationTable run_ablate(const ExperimentConfig& config, const ToyNet& teacher,
                         std::span<const double> temperatures, std::span<const double> alphas,
                         const fs::path& out, std::size_t threads) {
  config.validate();
  const Splits splits = make_splits(config);
  AblationTable table = ablate(config, teacher, splits, temperatures, alphas, threads);
  ensure_dir(out);
  write_text(out / "ablation.csv", table.to_csv(config.seeds));
  json extra;
  extra["grid_T"] = std::vector<double>(temperatures.begin(), temperatures.end());
  extra["grid_alpha"] = std::vector<double>(alphas.begin(), alphas.end());
  const std::vector<std::string> artifacts{"ablation.csv"};
  write_manifest(out, "ablate", config, artifacts, extra.dump());
  return table;
}

std::vector<ComplexityRow> complexity_table(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                            std::uint64_t n, double p) {
  std::vector<ComplexityRow> rows;
  for (LossKind k : kAllLossKinds) {
    if (k == LossKind::CrossEntropy) continue;
    const ComplexityReport r = complexity(k, h, w, c, n, p);
    rows.push_back({std::string(to_string(k)), r.term, r.exact, r.value});
  }
  rows.push_back({"HO", "O(D) (unsupported)", std::nullopt, std::nan("")});
  return rows;
}

std::string complexity_csv(std::span<const ComplexityRow> rows) {
  std::string out = "loss,term,value\n";
  for (const auto& r : rows) {
    std::string value = "unsupported";
    if (r.exact) value = std::to_string(*r.exact);
    else if (std::isfinite(r.value)) value = fixed(r.value, 1);
    out += r.loss + "," + r.term + "," + value + "\n";
  }
  return out;
}

std::vector<ComplexityRow> run_complexity(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                          std::uint64_t n, double p, const fs::path& out) {
  auto rows = complexity_table(h, w, c, n, p);
  ensure_dir(out);
  write_text(out / "complexity.csv", complexity_csv(rows));
  json extra;
  extra["h"] = h;
  extra["w"] = w;
  extra["c"] = c;
  extra["n"] = n;
  extra["p"] = p;
  const std::vector<std::string> artifacts{"complexity.csv"};
  write_manifest(out, "complexity", ExperimentConfig::defaults(), artifacts, extra.dump());
  return rows;
}

Tensor4 channel_dump(const Tensor4& tap, double temperature) {
  return channel_distribution(tap, temperature).probs;
}

ChannelDumps run_dump_channels(const ExperimentConfig& config, const ToyNet& net,
                               const Tensor4& images, double temperature, const fs::path& out) {
  const TapPair taps = forward(net, images);
  ChannelDumps d{channel_dump(taps.feature, temperature), channel_dump(taps.score, temperature)};
  ensure_dir(out);
  write_cwt1(out / "feature_channels.cwt", d.feature);
  write_cwt1(out / "score_channels.cwt", d.score);
  json extra;
  extra["temperature"] = temperature;
  extra["images"] = {images.shape().n, images.shape().c, images.shape().h, images.shape().w};
  extra["network_width"] = net.width;
  extra["network_seed"] = net.seed;
  const std::vector<std::string> artifacts{"feature_channels.cwt", "score_channels.cwt"};
  write_manifest(out, "dump-channels", config, artifacts, extra.dump());
  return d;
}

Tensor4 default_dump_batch(const ExperimentConfig& config, std::size_t count) {
  const Splits s = make_splits(config);
  std::vector<std::size_t> idx(std::min(count, s.val.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return gather_images(s.val, idx);
}

}  // namespace cwkd
