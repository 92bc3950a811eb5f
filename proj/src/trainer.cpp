#include "cwkd/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cwkd/errors.hpp"
#include "cwkd/metrics.hpp"
#include "cwkd/parallel.hpp"
#include "cwkd/rng.hpp"

namespace cwkd {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const char* where) {
  if (!j.is_object()) throw FormatError(std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw FormatError(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

std::string_view to_string(Reduction r) { return r == Reduction::Mean ? "mean" : "sum"; }

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::Mean;
  if (s == "sum") return Reduction::Sum;
  throw FormatError("unknown reduction '" + s + "'");
}

LossSpec term_from_json(const json& j, const LossSpec* base) {
  reject_unknown(j, {"kind", "target", "alpha", "temperature", "p", "reduction"}, "term");
  const LossKind kind = parse_loss_kind(j.at("kind").get<std::string>());
  LossSpec s = base != nullptr ? *base : default_term(kind);
  s.kind = kind;
  if (j.contains("target")) s.target = parse_target(j["target"].get<std::string>());
  if (j.contains("alpha")) s.alpha = j["alpha"].get<double>();
  if (j.contains("temperature")) s.temperature = j["temperature"].get<double>();
  if (j.contains("p")) s.p = j["p"].get<double>();
  if (j.contains("reduction")) s.reduction = parse_reduction(j["reduction"].get<std::string>());
  return s;
}

json term_to_json(const LossSpec& s) {
  json j;
  j["kind"] = to_string(s.kind);
  j["target"] = to_string(s.target);
  j["alpha"] = s.alpha;
  j["temperature"] = s.temperature;
  j["p"] = s.p;
  j["reduction"] = to_string(s.reduction);
  return j;
}

void read_optimizer(const json& j, std::size_t& width, OptimizerParams& o, const char* where) {
  reject_unknown(j, {"width", "lr", "momentum", "steps", "batch", "val_every"}, where);
  width = j.value("width", width);
  o.lr = j.value("lr", o.lr);
  o.momentum = j.value("momentum", o.momentum);
  o.steps = j.value("steps", o.steps);
  o.batch = j.value("batch", o.batch);
  o.val_every = j.value("val_every", o.val_every);
}

json optimizer_to_json(std::size_t width, const OptimizerParams& o) {
  return json{{"width", width},       {"lr", o.lr},       {"momentum", o.momentum},
              {"steps", o.steps},     {"batch", o.batch}, {"val_every", o.val_every}};
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

LossSpec default_term(LossKind kind) {
  LossSpec s{kind};
  switch (kind) {
    case LossKind::CrossEntropy:
      s.alpha = 1.0;
      s.target = Target::Score;
      break;
    case LossKind::CwKl:
    case LossKind::CwBhattacharyya:
    case LossKind::CwL2:
      s.alpha = 35.0;
      s.temperature = 1.0;
      s.target = Target::Feature;
      break;
    // MIMIC and LOCAL sum squared distances over channels (and 8 neighbours for
    // LOCAL), so at alpha 1 they start one to two orders of magnitude above the
    // cross-entropy term and stall it. These weights bring their initial value
    // on the default toy net to roughly ln(classes).
    case LossKind::Mimic:
      s.alpha = 0.08;
      s.target = Target::Feature;
      break;
    case LossKind::AttentionTransfer:
      s.alpha = 1.0;
      s.p = 2.0;
      s.target = Target::Feature;
      break;
    case LossKind::Pixelwise:
      s.alpha = 1.0;
      s.temperature = 1.0;
      s.target = Target::Score;
      break;
    case LossKind::LocalSimilarity:
      s.alpha = 0.005;
      s.target = Target::Feature;
      break;
    case LossKind::PairwiseAffinity:
    case LossKind::Ifvd:
      s.alpha = 1.0;
      s.target = Target::Feature;
      break;
  }
  return s;
}

LossSpec compare_term(const ExperimentConfig& config, LossKind kind) {
  const auto it = config.compare_specs.find(kind);
  return it != config.compare_specs.end() ? it->second : default_term(kind);
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.terms = {default_term(LossKind::CrossEntropy), default_term(LossKind::CwKl)};
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  ExperimentConfig c = defaults();
  try {
    reject_unknown(j, {"seed", "dataset", "teacher", "student", "terms", "seeds", "compare"},
                   "config");
    c.seed = j.value("seed", c.seed);
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      reject_unknown(d, {"train", "val", "height", "width", "classes"}, "dataset");
      c.dataset.train = d.value("train", c.dataset.train);
      c.dataset.val = d.value("val", c.dataset.val);
      c.dataset.height = d.value("height", c.dataset.height);
      c.dataset.width = d.value("width", c.dataset.width);
      c.dataset.classes = d.value("classes", c.dataset.classes);
    }
    if (j.contains("teacher")) read_optimizer(j["teacher"], c.teacher_width, c.teacher_optimizer, "teacher");
    if (j.contains("student")) read_optimizer(j["student"], c.student_width, c.optimizer, "student");
    if (j.contains("terms")) {
      c.terms.clear();
      for (const auto& t : j["terms"]) c.terms.push_back(term_from_json(t, nullptr));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("compare")) {
      for (const auto& [name, t] : j["compare"].items()) {
        json tj = t;
        tj["kind"] = name;
        const LossKind kind = parse_loss_kind(name);
        c.compare_specs[kind] = term_from_json(tj, nullptr);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = {{"train", dataset.train},
                  {"val", dataset.val},
                  {"height", dataset.height},
                  {"width", dataset.width},
                  {"classes", dataset.classes}};
  j["teacher"] = optimizer_to_json(teacher_width, teacher_optimizer);
  j["student"] = optimizer_to_json(student_width, optimizer);
  j["terms"] = json::array();
  for (const auto& t : terms) j["terms"].push_back(term_to_json(t));
  j["seeds"] = seeds;
  j["compare"] = json::object();
  for (const auto& [kind, t] : compare_specs) {
    json tj = term_to_json(t);
    tj.erase("kind");
    j["compare"][std::string(cwkd::to_string(kind))] = tj;
  }
  return j.dump(2);
}

void ExperimentConfig::validate() const {
  std::size_t ce = 0;
  for (const auto& t : terms) {
    t.validate();
    if (t.kind == LossKind::CrossEntropy) {
      ++ce;
      if (t.target != Target::Score) throw ParameterError("config: CE must target the score tap");
    }
  }
  if (ce != 1) throw ParameterError("config: exactly one CE term is required, found " + std::to_string(ce));
  for (const auto& [kind, t] : compare_specs) t.validate();
  if (teacher_width == 0 || student_width == 0) throw ParameterError("config: widths must be > 0");
  if (optimizer.batch == 0 || teacher_optimizer.batch == 0) throw ParameterError("config: batch must be > 0");
  if (optimizer.val_every == 0 || teacher_optimizer.val_every == 0) {
    throw ParameterError("config: val_every must be > 0");
  }
  if (dataset.train == 0) throw ParameterError("config: empty training set");
}

std::uint64_t dataset_seed(const ExperimentConfig& config) { return Rng::derive(config.seed, "dataset"); }

std::uint64_t run_seed(const ExperimentConfig& config, std::uint64_t run) {
  return Rng::derive(config.seed, "run/" + std::to_string(run));
}

Splits make_splits(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  const std::size_t total = d.train + d.val;
  Dataset all = generate(dataset_seed(config), total, d.height, d.width, d.classes);
  std::vector<std::size_t> train(d.train), val(d.val);
  std::iota(train.begin(), train.end(), std::size_t{0});
  std::iota(val.begin(), val.end(), d.train);
  return Splits{subset(all, train), subset(all, val)};
}

void sgd_step(std::span<Tensor4> params, std::span<const Tensor4> grads, SgdState& state,
              double lr, double momentum) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: params/grads count mismatch");
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.shape());
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: velocity count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "sgd_step");
    require_same_shape(params[i], state.velocity[i], "sgd_step");
    auto v = state.velocity[i].data();
    auto p = params[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
  ++state.step;
}

std::string MetricsLog::to_csv() const {
  std::string out = "step";
  for (const auto& c : columns) out += "," + c;
  out += ",total,val_mIoU\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    for (double v : r.components) out += "," + format_double(v);
    out += "," + format_double(r.total) + ",";
    if (r.val_miou) out += format_double(*r.val_miou);
    out += "\n";
  }
  return out;
}

double evaluate_miou(const ToyNet& net, const Dataset& ds) {
  ConfusionMatrix conf(net.classes);
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < ds.size(); b += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, ds.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    conf.add(forward(net, gather_images(ds, idx)).score, gather_labels(ds, idx));
  }
  return miou(conf).mean;
}

namespace {

// Epoch-wise shuffled minibatches.
class BatchSampler {
 public:
  BatchSampler(std::uint64_t seed, std::size_t count, std::size_t batch)
      : rng_(seed), order_(count), batch_(std::min(batch, count)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > order_.size()) {
      shuffle();
      pos_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
};

bool is_eval_step(std::size_t step, const OptimizerParams& o) {
  return step % o.val_every == 0 || step == o.steps;
}

}  // namespace

TeacherResult train_teacher(const ExperimentConfig& config, const Splits& splits) {
  config.validate();
  const auto& opt = config.teacher_optimizer;
  TeacherResult r;
  r.net = init_toynet(Rng::derive(config.seed, "teacher/init"), config.teacher_width,
                      config.dataset.classes);
  r.log.columns = {"CE"};
  BatchSampler sampler(Rng::derive(config.seed, "teacher/batches"), splits.train.size(), opt.batch);
  SgdState sgd;
  for (std::size_t step = 1; step <= opt.steps; ++step) {
    const auto idx = sampler.next();
    const ForwardTrace trace = forward_trace(r.net, gather_images(splits.train, idx));
    const LossResult ce = cross_entropy(trace.taps.score, gather_labels(splits.train, idx));
    if (!std::isfinite(ce.value)) {
      throw DivergenceError("teacher training diverged at step " + std::to_string(step), step, r.net);
    }
    const NetGrads g = backward(r.net, trace, Tensor4{}, ce.grad_student);
    sgd_step(r.net.params, g, sgd, opt.lr, opt.momentum);
    MetricsRow row{step, {ce.value}, ce.value, std::nullopt};
    if (is_eval_step(step, opt) && splits.val.size() > 0) row.val_miou = evaluate_miou(r.net, splits.val);
    r.log.rows.push_back(std::move(row));
  }
  r.val_miou = splits.val.size() > 0 ? evaluate_miou(r.net, splits.val) : 0.0;
  return r;
}

TeacherResult train_teacher(const ExperimentConfig& config) {
  return train_teacher(config, make_splits(config));
}

namespace {

std::string column_name(const LossSpec& s) {
  if (s.kind == LossKind::CrossEntropy) return "CE";
  return std::string(to_string(s.kind)) + "@" + std::string(to_string(s.target));
}

}  // namespace

DistillResult distill(const ExperimentConfig& config, const ToyNet& teacher, const Splits& splits,
                      std::uint64_t run, const ToyNet* initial_student) {
  config.validate();
  const auto& opt = config.optimizer;
  if (teacher.classes != config.dataset.classes) {
    throw ShapeError("distill: teacher has " + std::to_string(teacher.classes) +
                     " classes, dataset has " + std::to_string(config.dataset.classes));
  }
  const std::uint64_t rs = run_seed(config, run);

  DistillResult r;
  r.student = initial_student != nullptr
                  ? *initial_student
                  : init_toynet(Rng::derive(rs, "student/init"), config.student_width,
                                config.dataset.classes);
  if (r.student.classes != teacher.classes) throw ShapeError("distill: class count mismatch");

  // CE first, then the distillation terms in config order.
  std::vector<LossSpec> terms;
  for (const auto& t : config.terms) {
    if (t.kind == LossKind::CrossEntropy) terms.insert(terms.begin(), t);
  }
  for (const auto& t : config.terms) {
    if (t.kind != LossKind::CrossEntropy) terms.push_back(t);
  }
  r.aligners.resize(terms.size());
  std::vector<SgdState> aligner_sgd(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    r.log.columns.push_back(column_name(terms[k]));
    if (terms[k].kind != LossKind::CrossEntropy && terms[k].target == Target::Feature &&
        r.student.width != teacher.width) {
      Rng rng(Rng::derive(rs, "aligner/" + std::to_string(k)));
      r.aligners[k] = Aligner::random(rng, r.student.width, teacher.width);
    }
  }

  // The teacher is frozen, so its taps on the training set are computed once.
  const TapPair teacher_taps = forward(teacher, splits.train.images);
  auto gather_rows = [](const Tensor4& t, const std::vector<std::size_t>& idx) {
    const Shape4 s = t.shape();
    const std::size_t per = s.c * s.h * s.w;
    Tensor4 out(Shape4{idx.size(), s.c, s.h, s.w});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * per), per,
                  out.data().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return out;
  };

  BatchSampler sampler(Rng::derive(rs, "student/batches"), splits.train.size(), opt.batch);
  SgdState sgd;
  r.best_student = r.student;
  bool have_best = false;
  for (std::size_t step = 1; step <= opt.steps; ++step) {
    const auto idx = sampler.next();
    const LabelMap labels = gather_labels(splits.train, idx);
    const ForwardTrace trace = forward_trace(r.student, gather_images(splits.train, idx));
    const Tensor4 t_feature = gather_rows(teacher_taps.feature, idx);
    const Tensor4 t_score = gather_rows(teacher_taps.score, idx);
    if (t_feature.shape().h != trace.taps.feature.shape().h ||
        t_feature.shape().w != trace.taps.feature.shape().w) {
      throw ShapeError("distill: teacher/student spatial mismatch");
    }

    std::vector<WeightedTerm> feature_terms, score_terms;
    MetricsRow row{step, {}, 0.0, std::nullopt};
    std::vector<AlignerGrads> aligner_grads(terms.size());
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const LossSpec& spec = terms[k];
      LossResult res;
      if (spec.kind == LossKind::CrossEntropy) {
        res = cross_entropy(trace.taps.score, labels);
      } else if (spec.target == Target::Score) {
        res = evaluate_loss(spec, t_score, trace.taps.score, &labels);
      } else {
        const Aligner* aligner = r.aligners[k] ? &*r.aligners[k] : nullptr;
        const Tensor4 aligned = align_channels(trace.taps.feature, aligner);
        res = evaluate_loss(spec, t_feature, aligned, &labels);
        if (aligner != nullptr) {
          aligner_grads[k] = align_channels_backward(trace.taps.feature, *aligner, res.grad_student);
          res.grad_student = aligner_grads[k].grad_x;
        }
      }
      if (!std::isfinite(res.value)) {
        throw DivergenceError("distillation diverged at step " + std::to_string(step) + " (" +
                                  column_name(spec) + ")",
                              step, r.student);
      }
      row.components.push_back(spec.alpha * res.value);
      (spec.target == Target::Feature ? feature_terms : score_terms)
          .push_back(WeightedTerm{spec, std::move(res)});
    }
    const LossResult feature_total = combine(feature_terms);
    const LossResult score_total = combine(score_terms);
    row.total = feature_total.value + score_total.value;

    const NetGrads g = backward(r.student, trace, feature_total.grad_student, score_total.grad_student);
    sgd_step(r.student.params, g, sgd, opt.lr, opt.momentum);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      if (!r.aligners[k]) continue;
      auto& a = *r.aligners[k];
      std::array<Tensor4, 2> params{std::move(a.weight), std::move(a.bias)};
      const std::array<Tensor4, 2> grads{terms[k].alpha * aligner_grads[k].grad_weight,
                                         terms[k].alpha * aligner_grads[k].grad_bias};
      sgd_step(params, grads, aligner_sgd[k], opt.lr, opt.momentum);
      a.weight = std::move(params[0]);
      a.bias = std::move(params[1]);
    }

    if (is_eval_step(step, opt) && splits.val.size() > 0) {
      const double m = evaluate_miou(r.student, splits.val);
      row.val_miou = m;
      if (!have_best || m > r.best_val_miou) {
        r.best_val_miou = m;
        r.best_step = step;
        r.best_student = r.student;
        have_best = true;
      }
    }
    r.log.rows.push_back(std::move(row));
  }
  r.final_val_miou = splits.val.size() > 0 ? evaluate_miou(r.student, splits.val) : 0.0;
  if (!have_best) {
    r.best_val_miou = r.final_val_miou;
    r.best_student = r.student;
  }
  return r;
}

std::string AblationTable::to_csv(std::span<const std::uint64_t> seeds) const {
  std::string out = "axis,value";
  for (auto s : seeds) out += ",seed_" + std::to_string(s);
  out += ",mean_val_mIoU\n";
  for (const auto& r : rows) {
    out += r.axis + "," + format_double(r.value);
    for (double m : r.miou) out += "," + format_double(m);
    out += "," + format_double(r.mean) + "\n";
  }
  return out;
}

AblationTable ablate(const ExperimentConfig& config, const ToyNet& teacher, const Splits& splits,
                     std::span<const double> temperatures, std::span<const double> alphas,
                     std::size_t threads) {
  const auto cw = std::find_if(config.terms.begin(), config.terms.end(),
                               [](const LossSpec& s) { return is_channelwise(s.kind); });
  if (cw == config.terms.end()) throw ParameterError("ablate: config has no channel-wise term");
  const double base_alpha = cw->alpha;
  const double base_temperature = cw->temperature;

  struct Job {
    std::string axis;
    double value;
    ExperimentConfig cfg;
  };
  std::vector<Job> jobs;
  auto variant = [&](double temperature, double alpha) {
    ExperimentConfig c = config;
    for (auto& t : c.terms) {
      if (!is_channelwise(t.kind)) continue;
      t.temperature = temperature;
      t.alpha = alpha;
    }
    return c;
  };
  for (double t : temperatures) jobs.push_back({"T", t, variant(t, base_alpha)});
  for (double a : alphas) jobs.push_back({"alpha", a, variant(base_temperature, a)});

  // The two sweeps share the (config T, config alpha) point; run each distinct
  // grid point once.
  std::vector<std::size_t> unique_of(jobs.size());
  std::vector<std::size_t> unique;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto same = std::find_if(unique.begin(), unique.end(), [&](std::size_t u) {
      return jobs[u].cfg.to_json() == jobs[j].cfg.to_json();
    });
    if (same == unique.end()) {
      unique_of[j] = unique.size();
      unique.push_back(j);
    } else {
      unique_of[j] = static_cast<std::size_t>(same - unique.begin());
    }
  }

  const std::size_t per = config.seeds.size();
  std::vector<double> unique_results(unique.size() * per);
  parallel_for(unique_results.size(), threads, [&](std::size_t i) {
    const Job& job = jobs[unique[i / per]];
    unique_results[i] = distill(job.cfg, teacher, splits, config.seeds[i % per]).best_val_miou;
  });
  std::vector<double> results(jobs.size() * per);
  for (std::size_t j = 0; j < jobs.size(); ++j)
    for (std::size_t s = 0; s < per; ++s) results[j * per + s] = unique_results[unique_of[j] * per + s];

  AblationTable table;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    AblationRow row{jobs[j].axis, jobs[j].value, {}, 0.0};
    for (std::size_t s = 0; s < per; ++s) row.miou.push_back(results[j * per + s]);
    row.mean = per == 0 ? 0.0 : std::accumulate(row.miou.begin(), row.miou.end(), 0.0) / per;
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace cwkd
