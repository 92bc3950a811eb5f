#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cwkd/commands.hpp"
#include "cwkd/data.hpp"
#include "cwkd/errors.hpp"
#include "cwkd/gradcheck.hpp"
#include "cwkd/losses.hpp"
#include "cwkd/metrics.hpp"
#include "cwkd/models.hpp"
#include "cwkd/trainer.hpp"

namespace py = pybind11;
using namespace cwkd;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor4 to_tensor(const F64Array& a, const char* name) {
  if (a.ndim() != 4) {
    throw ShapeError(std::string(name) + " must be a 4-d (n, c, h, w) array, got " +
                     std::to_string(a.ndim()) + " dimensions");
  }
  const Shape4 s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                 static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
  Tensor4 t(s);
  if (s.size() > 0) std::memcpy(t.data().data(), a.data(), s.size() * sizeof(double));
  return t;
}

F64Array to_numpy(const Tensor4& t) {
  const Shape4& s = t.shape();
  F64Array out({s.n, s.c, s.h, s.w});
  if (t.size() > 0) std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(double));
  return out;
}

LabelMap to_labels(const I32Array& a) {
  if (a.ndim() != 3) throw ShapeError("labels must be a 3-d (n, h, w) integer array");
  LabelMap l(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
             static_cast<std::size_t>(a.shape(2)));
  if (l.size() > 0) std::memcpy(l.data().data(), a.data(), l.size() * sizeof(std::int32_t));
  return l;
}

I32Array labels_to_numpy(const LabelMap& l) {
  I32Array out({l.n(), l.h(), l.w()});
  if (l.size() > 0) std::memcpy(out.mutable_data(), l.data().data(), l.size() * sizeof(std::int32_t));
  return out;
}

py::tuple result(const LossResult& r) { return py::make_tuple(r.value, to_numpy(r.grad_student)); }

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::Mean;
  if (s == "sum") return Reduction::Sum;
  throw ParameterError("reduction must be 'mean' or 'sum', got '" + s + "'");
}

ExperimentConfig config_from(const std::string& json_text) {
  ExperimentConfig c = ExperimentConfig::from_json(json_text);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_cwkd, m) {
  m.doc() = "Native core of the cwkd package";
  m.attr("__version__") = std::string(kToolVersion);
  m.attr("IGNORE") = LabelMap::kIgnore;

  auto value_error = py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<NormalizationError>(m, "NormalizationError", PyExc_ArithmeticError);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", PyExc_NotImplementedError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  (void)value_error;

  // Distributions and losses. Every loss returns (value, gradient w.r.t. student).
  m.def("channel_distribution",
        [](const F64Array& x, double t) { return to_numpy(channel_distribution(to_tensor(x, "x"), t).probs); },
        py::arg("x"), py::arg("temperature") = 1.0,
        "Per-(sample, channel) softmax over spatial positions.");
  m.def(
      "channelwise_kl",
      [](const F64Array& t, const F64Array& s, double T, const std::string& red) {
        return result(channelwise_kl(to_tensor(t, "teacher"), to_tensor(s, "student"), T, parse_reduction(red)));
      },
      py::arg("teacher"), py::arg("student"), py::arg("temperature") = 1.0, py::arg("reduction") = "mean");
  m.def(
      "channelwise_bhattacharyya",
      [](const F64Array& t, const F64Array& s, double T, const std::string& red) {
        return result(channelwise_bhattacharyya(to_tensor(t, "teacher"), to_tensor(s, "student"), T,
                                                parse_reduction(red)));
      },
      py::arg("teacher"), py::arg("student"), py::arg("temperature") = 1.0, py::arg("reduction") = "mean");
  m.def(
      "channelwise_l2",
      [](const F64Array& t, const F64Array& s, double T, const std::string& red) {
        return result(channelwise_l2(to_tensor(t, "teacher"), to_tensor(s, "student"), T, parse_reduction(red)));
      },
      py::arg("teacher"), py::arg("student"), py::arg("temperature") = 1.0, py::arg("reduction") = "mean");
  m.def(
      "mimic_l2",
      [](const F64Array& t, const F64Array& s) { return result(mimic_l2(to_tensor(t, "teacher"), to_tensor(s, "student"))); },
      py::arg("teacher"), py::arg("student"));
  m.def(
      "attention_transfer",
      [](const F64Array& t, const F64Array& s, double p) {
        return result(attention_transfer(to_tensor(t, "teacher"), to_tensor(s, "student"), p));
      },
      py::arg("teacher"), py::arg("student"), py::arg("p") = 2.0);
  m.def(
      "pixelwise_kl",
      [](const F64Array& t, const F64Array& s, double tau) {
        return result(pixelwise_kl(to_tensor(t, "teacher"), to_tensor(s, "student"), tau));
      },
      py::arg("teacher"), py::arg("student"), py::arg("tau") = 1.0);
  m.def(
      "local_similarity",
      [](const F64Array& t, const F64Array& s) {
        return result(local_similarity(to_tensor(t, "teacher"), to_tensor(s, "student")));
      },
      py::arg("teacher"), py::arg("student"));
  m.def(
      "pairwise_affinity",
      [](const F64Array& t, const F64Array& s) {
        return result(pairwise_affinity(to_tensor(t, "teacher"), to_tensor(s, "student")));
      },
      py::arg("teacher"), py::arg("student"));
  m.def(
      "ifvd",
      [](const F64Array& t, const F64Array& s, const I32Array& labels) {
        return result(ifvd(to_tensor(t, "teacher"), to_tensor(s, "student"), to_labels(labels)));
      },
      py::arg("teacher"), py::arg("student"), py::arg("labels"));
  m.def(
      "cross_entropy",
      [](const F64Array& logits, const I32Array& labels) {
        return result(cross_entropy(to_tensor(logits, "logits"), to_labels(labels)));
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double tolerance, std::size_t instances) {
        const GradCheckReport r = check_all_losses(seed, kDefaultGradcheckShapes, tolerance, instances);
        return py::module_::import("json").attr("loads")(r.to_json());
      },
      py::arg("seed") = 0, py::arg("tolerance") = 1e-4, py::arg("instances") = 1,
      "Finite-difference check of every loss; returns the report as a dict.");

  m.def(
      "complexity",
      [](const std::string& kind, std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t n, double p) {
        const ComplexityReport r = complexity(kind, h, w, c, n, p);
        py::dict d;
        d["term"] = r.term;
        d["exact"] = r.exact ? py::cast(*r.exact) : py::none();
        d["value"] = r.value;
        return d;
      },
      py::arg("kind"), py::arg("h"), py::arg("w"), py::arg("c"), py::arg("n") = 4, py::arg("p") = 2.0);
  m.def("complexity_csv",
        [](std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t n, double p) {
          return complexity_csv(complexity_table(h, w, c, n, p));
        },
        py::arg("h") = 64, py::arg("w") = 64, py::arg("c") = 32, py::arg("n") = 4, py::arg("p") = 2.0);

  m.def(
      "miou",
      [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& counts) {
        if (counts.ndim() != 2 || counts.shape(0) != counts.shape(1)) {
          throw ShapeError("confusion counts must be a square 2-d array");
        }
        const std::vector<std::uint64_t> flat(counts.data(), counts.data() + counts.size());
        const ConfusionMatrix conf = ConfusionMatrix::from_counts(static_cast<std::size_t>(counts.shape(0)), flat);
        const IoUResult r = miou(conf);
        py::list per;
        for (const auto& v : r.per_class) per.append(v ? py::cast(*v) : py::none());
        return py::make_tuple(r.mean, per, macc(conf));
      },
      py::arg("confusion"), "Returns (mIoU, per-class IoU with None for absent classes, mAcc).");

  m.def(
      "generate",
      [](std::uint64_t seed, std::size_t count, std::size_t h, std::size_t w, std::size_t classes) {
        const Dataset ds = generate(seed, count, h, w, classes);
        return py::make_tuple(to_numpy(ds.images), labels_to_numpy(ds.labels));
      },
      py::arg("seed"), py::arg("count"), py::arg("height") = 32, py::arg("width") = 32, py::arg("classes") = 4,
      "Synthetic scenes as (images, labels).");

  m.def("default_config", [] { return ExperimentConfig::defaults().to_json(); });
  m.def("normalize_config", [](const std::string& text) { return config_from(text).to_json(); },
        py::arg("config_json"));

  m.def(
      "forward",
      [](const std::string& checkpoint, const F64Array& images) {
        const ToyNet net = load_checkpoint(checkpoint);
        const TapPair taps = forward(net, to_tensor(images, "images"));
        return py::make_tuple(to_numpy(taps.feature), to_numpy(taps.score));
      },
      py::arg("checkpoint"), py::arg("images"), "Returns the (feature, score) taps of a saved network.");

  // Command entry points, equivalent to the CLI subcommands.
  m.def(
      "run_gen_data",
      [](const std::string& config, const std::string& out) { return run_gen_data(config_from(config), out).size(); },
      py::arg("config_json"), py::arg("out"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "run_train_teacher",
      [](const std::string& config, const std::string& out) { return run_train_teacher(config_from(config), out).val_miou; },
      py::arg("config_json"), py::arg("out"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "run_distill",
      [](const std::string& config, const std::string& teacher, const std::string& out, std::size_t threads) {
        std::vector<double> best;
        for (const auto& r : run_distill(config_from(config), load_checkpoint(teacher), out, threads)) {
          best.push_back(r.best_val_miou);
        }
        return best;
      },
      py::arg("config_json"), py::arg("teacher"), py::arg("out"), py::arg("threads") = 1,
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "run_compare",
      [](const std::string& config, const std::string& teacher, const std::vector<std::string>& losses,
         const std::string& out, std::size_t threads) {
        std::vector<LossKind> kinds;
        for (const auto& l : losses) kinds.push_back(parse_loss_kind(l));
        if (kinds.empty()) kinds.assign(kCompareKinds.begin(), kCompareKinds.end());
        return run_compare(config_from(config), load_checkpoint(teacher), kinds, out, threads).to_csv();
      },
      py::arg("config_json"), py::arg("teacher"), py::arg("losses") = std::vector<std::string>{},
      py::arg("out") = "cwkd_out", py::arg("threads") = 1, py::call_guard<py::gil_scoped_release>(),
      "Returns the comparison table as CSV text.");
  m.def(
      "run_ablate",
      [](const std::string& config, const std::string& teacher, const std::vector<double>& ts,
         const std::vector<double>& as, const std::string& out, std::size_t threads) {
        const ExperimentConfig c = config_from(config);
        return run_ablate(c, load_checkpoint(teacher), ts, as, out, threads).to_csv(c.seeds);
      },
      py::arg("config_json"), py::arg("teacher"), py::arg("grid_T") = kDefaultTemperatureGrid,
      py::arg("grid_alpha") = kDefaultAlphaGrid, py::arg("out") = "cwkd_out", py::arg("threads") = 1,
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "run_dump_channels",
      [](const std::string& config, const std::string& checkpoint, const std::string& out, double temperature) {
        const ExperimentConfig c = config_from(config);
        const ChannelDumps d = run_dump_channels(c, load_checkpoint(checkpoint), default_dump_batch(c), temperature, out);
        return py::make_tuple(to_numpy(d.feature), to_numpy(d.score));
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("out"), py::arg("temperature") = 1.0);
}
