#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kdctc/experiment.hpp"
#include "kdctc/report.hpp"
#include "kdctc/synth.hpp"
#include "kdctc/trainer.hpp"

namespace py = pybind11;
using namespace kdctc;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Tensor t;
  t.shape.assign(a.shape(), a.shape() + a.ndim());
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  py::array_t<double> a(t.shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

KvMap kv_from_dict(const py::dict& d) {
  KvMap kv;
  for (const auto& item : d) kv[py::str(item.first)] = py::str(item.second);
  return kv;
}

RunConfig config_from_dict(const py::dict& d) {
  RunConfig cfg;
  apply_kv(cfg, kv_from_dict(d));
  return cfg;
}

py::dict eval_to_dict(const EvalResult& ev) {
  py::dict d;
  d["accuracy"] = ev.accuracy;
  d["per_class_accuracy"] = ev.per_class_accuracy;
  d["confusion"] = ev.confusion;
  d["n_test"] = ev.n_test;
  return d;
}

py::dict report_to_dict(const LossReport& r) {
  py::dict d;
  d["main_loss"] = r.main_loss;
  d["dist_loss"] = r.dist_loss;
  d["total"] = r.total;
  d["dist_variant"] = std::string(to_string(r.dist_variant));
  d["images_per_class"] = r.images_per_class;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core: dataset manifests, the dual-branch distillation trainer and its losses";

  py::register_exception<Error>(m, "KdctcError");

  // --- data manifests -------------------------------------------------
  py::class_<DatasetIndex>(m, "DatasetIndex")
      .def_property_readonly("root_path", [](const DatasetIndex& d) { return d.root_path.string(); })
      .def_readonly("classes", &DatasetIndex::classes)
      .def_readonly("samples", &DatasetIndex::samples)
      .def_readonly("image_size_hint", &DatasetIndex::image_size_hint)
      .def("class_count", &DatasetIndex::class_count);

  py::class_<SplitManifest>(m, "SplitManifest")
      .def_readonly("dataset_id", &SplitManifest::dataset_id)
      .def_property_readonly("role", [](const SplitManifest& s) { return std::string(to_string(s.role)); })
      .def_readonly("percentage", &SplitManifest::percentage)
      .def_readonly("seed", &SplitManifest::seed)
      .def_readonly("classes", &SplitManifest::classes)
      .def_readonly("entries", &SplitManifest::entries)
      .def_readonly("per_class_count", &SplitManifest::per_class_count);

  m.def("scan_dataset", [](const std::filesystem::path& root) { return scan_dataset(root); }, py::arg("root"));
  m.def("subsample_balanced", &subsample_balanced, py::arg("index"), py::arg("n_per_class"), py::arg("seed"));
  m.def("stratified_split", &stratified_split, py::arg("index"), py::arg("seed"));
  m.def("sample_low_data", &sample_low_data, py::arg("train_full"), py::arg("percentage"), py::arg("seed"));
  m.def("low_data_count", &low_data_count, py::arg("percentage"), py::arg("base_per_class"));
  m.def("write_manifest", &write_manifest, py::arg("manifest"), py::arg("path"));
  m.def("read_manifest", &read_manifest, py::arg("path"));

  // --- objectives -------------------------------------------------------
  py::class_<LossConfig>(m, "LossConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &LossConfig::alpha)
      .def_readwrite("n_min", &LossConfig::n_min)
      .def_readwrite("focal_gamma", &LossConfig::focal_gamma)
      .def_readwrite("main_weight", &LossConfig::main_weight)
      .def_readwrite("dist_weight", &LossConfig::dist_weight);

  m.def("cross_entropy",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const std::vector<int>& labels) { return cross_entropy(tensor_from_array(logits), labels); },
        py::arg("logits"), py::arg("labels"));
  m.def("focal_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const std::vector<int>& labels, real gamma) {
          return focal_loss(tensor_from_array(logits), labels, gamma);
        },
        py::arg("logits"), py::arg("labels"), py::arg("gamma") = 2.0);
  m.def("teacher_hard_label",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits) {
          return teacher_hard_label(tensor_from_array(logits));
        },
        py::arg("logits"));
  m.def("distillation_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& student_logits,
           const std::vector<int>& teacher_labels, int images_per_class, const LossConfig& cfg) {
          auto [loss, variant] = distillation_loss(tensor_from_array(student_logits), teacher_labels,
                                                   images_per_class, cfg);
          return py::make_tuple(loss, std::string(to_string(variant)));
        },
        py::arg("student_logits"), py::arg("teacher_labels"), py::arg("images_per_class"),
        py::arg("config") = LossConfig{});
  m.def("total_loss",
        [](real main_loss, real dist_loss, const LossConfig& cfg) { return total_loss(main_loss, dist_loss, cfg); },
        py::arg("main_loss"), py::arg("dist_loss"), py::arg("config") = LossConfig{});

  // --- model ------------------------------------------------------------
  py::class_<Model>(m, "Model")
      .def_readonly("arch_id", &Model::arch_id)
      .def_readonly("num_classes", &Model::num_classes)
      .def_readonly("downsample_factor", &Model::downsample_factor)
      .def_readonly("class_names", &Model::class_names)
      .def("forward",
           [](Model& model, const py::array_t<double, py::array::c_style | py::array::forcecast>& images,
              bool train) {
             const FwdOpts opts{.train = train, .fp32 = false};
             return array_from_tensor(model.forward(tensor_from_array(images), opts, nullptr));
           },
           py::arg("images"), py::arg("train") = false)
      .def("parameter_names", [](const Model& model) {
        std::vector<std::string> names;
        for (const Param* p : model.params) names.push_back(p->name);
        return names;
      });

  m.def("build_model",
        [](const std::string& arch, int num_classes, std::uint64_t seed, const std::string& pretrained) {
          ModelInit init;
          if (pretrained.empty()) init = InitRandom{seed};
          else init = InitPretrained{pretrained, seed};
          return build_model(arch, num_classes, init);
        },
        py::arg("arch"), py::arg("num_classes"), py::arg("seed") = 0, py::arg("pretrained") = "");
  m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  // --- training / evaluation --------------------------------------------
  m.def("train",
        [](Model& model, const SplitManifest& manifest, const std::filesystem::path& data_root,
           const py::dict& config, const std::string& out_dir) {
          RunConfig cfg = config_from_dict(config);
          TrainHooks hooks;
          hooks.out_dir = out_dir;
          const auto history =
              train(model, manifest, data_root, cfg.method, cfg.train, cfg.pipeline, cfg.disable_local, hooks);
          py::list out;
          for (const auto& r : history) out.append(report_to_dict(r));
          return out;
        },
        py::arg("model"), py::arg("manifest"), py::arg("data_root"), py::arg("config") = py::dict{},
        py::arg("out_dir") = "");
  m.def("evaluate",
        [](Model& model, const SplitManifest& manifest, const std::filesystem::path& data_root,
           const py::dict& config) {
          RunConfig cfg = config_from_dict(config);
          return eval_to_dict(evaluate(model, manifest, data_root, cfg.pipeline, cfg.train.batch_size));
        },
        py::arg("model"), py::arg("manifest"), py::arg("data_root"), py::arg("config") = py::dict{});

  // --- experiment pipeline ----------------------------------------------
  m.def("generate_synthetic_texture_dataset", &generate_synthetic_texture_dataset, py::arg("n_classes"),
        py::arg("n_per_class"), py::arg("image_size"), py::arg("seed"), py::arg("out_root"));
  m.def("run_experiment",
        [](const std::filesystem::path& root, const std::filesystem::path& results_dir,
           const std::vector<std::string>& methods, const std::vector<int>& percentages,
           const std::vector<std::uint64_t>& seeds, const py::dict& config, int subsample_per_class,
           std::uint64_t subsample_seed) {
          ExperimentPlan plan;
          plan.dataset_root = root;
          plan.results_dir = results_dir;
          for (const auto& s : methods) plan.methods.push_back(method_from_string(s));
          plan.percentages = percentages;
          plan.seeds = seeds;
          plan.config = config_from_dict(config);
          plan.subsample_per_class = subsample_per_class;
          plan.subsample_seed = subsample_seed;
          const ExperimentOutcome outcome = run_experiment(plan);
          py::dict d;
          py::list aggs;
          for (const auto& row : outcome.aggregates) {
            py::dict a;
            a["method"] = row.method;
            a["percentage"] = row.percentage;
            a["mean_accuracy"] = row.mean_accuracy;
            a["std_accuracy"] = row.std_accuracy;
            a["n_seeds"] = row.n_seeds;
            aggs.append(a);
          }
          d["aggregates"] = aggs;
          d["failures"] = outcome.failures;
          d["n_runs"] = outcome.results.size();
          return d;
        },
        py::arg("root"), py::arg("results_dir"), py::arg("methods"), py::arg("percentages"), py::arg("seeds"),
        py::arg("config") = py::dict{}, py::arg("subsample_per_class") = 0, py::arg("subsample_seed") = 0);
  m.def("write_report", &write_report, py::arg("results_dir"), py::arg("out_dir"));

  m.attr("__version__") = "0.1.0";
}
