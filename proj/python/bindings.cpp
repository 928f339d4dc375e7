#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "getam/attribution.hpp"
#include "getam/cli.hpp"
#include "getam/data_eval.hpp"
#include "getam/label_completion.hpp"
#include "getam/model_gradcheck.hpp"
#include "getam/training.hpp"

namespace py = pybind11;
using namespace getam;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

F64Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  F64Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

LabelImage to_labels(const U8Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D uint8 array");
  LabelImage l(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), l.data.begin());
  return l;
}

U8Array to_numpy(const LabelImage& l) {
  U8Array out({static_cast<py::ssize_t>(l.height), static_cast<py::ssize_t>(l.width)});
  std::copy(l.data.begin(), l.data.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "GETAM attribution, label completion and training on a small ViT";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &ModelConfig::image_size)
      .def_readwrite("patch_size", &ModelConfig::patch_size)
      .def_readwrite("dim", &ModelConfig::dim)
      .def_readwrite("depth", &ModelConfig::depth)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_property_readonly("grid", &ModelConfig::grid);

  py::class_<VisionTransformer>(m, "VisionTransformer")
      .def(py::init<ModelConfig>(), py::arg("config") = ModelConfig{})
      .def_property_readonly("config", &VisionTransformer::config)
      .def("save", &VisionTransformer::save)
      .def_static("load", &VisionTransformer::load)
      .def("parameter_hash", [](const VisionTransformer& v) { return v.parameters().hash(); })
      .def("parameter_names",
           [](const VisionTransformer& v) {
             std::vector<std::string> names;
             for (std::size_t i = 0; i < v.parameters().size(); ++i)
               names.push_back(v.parameters().name(i));
             return names;
           })
      .def("parameter", [](const VisionTransformer& v, const std::string& name) {
        return to_numpy(v.parameters()[name]);
      })
      .def(
          "logits",
          [](const VisionTransformer& v, const F64Array& image) {
            Tape t;
            ForwardOptions o;
            o.params_require_grad = false;
            return to_numpy(v.forward_with_taps(t, to_tensor(image), o).prediction.logits.value());
          },
          py::arg("image"))
      .def(
          "segment",
          [](const VisionTransformer& v, const F64Array& image) {
            return to_numpy(predict_segmentation(v, to_tensor(image)));
          },
          py::arg("image"));

  py::class_<Sample>(m, "Sample")
      .def_readonly("id", &Sample::id)
      .def_readonly("labels", &Sample::labels)
      .def_property_readonly("image", [](const Sample& s) { return to_numpy(s.image); })
      .def_property_readonly("gt", [](const Sample& s) { return to_numpy(s.gt); })
      .def_property_readonly("saliency", [](const Sample& s) { return to_numpy(s.saliency); })
      .def_property_readonly("withheld_class", [](const Sample& s) { return withheld_class(s); });

  m.def(
      "generate_dataset",
      [](std::size_t num_images, std::uint64_t seed, std::size_t num_classes,
         std::size_t image_size, double nonsalient_fraction, const std::string& id_prefix) {
        DatasetConfig dc;
        dc.num_images = num_images;
        dc.seed = seed;
        dc.num_classes = num_classes;
        dc.image_size = image_size;
        dc.nonsalient_fraction = nonsalient_fraction;
        dc.id_prefix = id_prefix;
        return generate_dataset(dc);
      },
      py::arg("num_images") = 200, py::arg("seed") = 0, py::arg("num_classes") = 3,
      py::arg("image_size") = 32, py::arg("nonsalient_fraction") = 0.2,
      py::arg("id_prefix") = "img");
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("samples"));

  m.def(
      "getam_block",
      [](std::vector<double> a, std::vector<double> g, std::size_t h, std::size_t w) {
        ClsAttentionRow row;
        row.a_cls = std::move(a);
        row.grad_cls = std::move(g);
        return to_numpy(getam_block(row, h, w).map);
      },
      py::arg("a"), py::arg("g"), py::arg("h"), py::arg("w"),
      "ReLU(g * a) * ReLU(g) reshaped to [h, w]");
  m.def(
      "aggregate",
      [](const std::vector<F64Array>& blocks, const std::string& fusion) {
        std::vector<ClassAttentionMap> maps;
        for (const auto& b : blocks) maps.push_back({0, to_tensor(b), false});
        return to_numpy(aggregate(maps, parse_fusion(fusion)).map);
      },
      py::arg("blocks"), py::arg("fusion") = "sum");
  m.def(
      "attribute",
      [](const VisionTransformer& model, const F64Array& image, std::vector<std::size_t> classes,
         const std::string& method, const std::string& fusion) {
        std::vector<F64Array> out;
        for (const auto& c : attribute(model, to_tensor(image), classes, parse_method(method),
                                       parse_fusion(fusion)))
          out.push_back(to_numpy(c.map));
        return out;
      },
      py::arg("model"), py::arg("image"), py::arg("classes"), py::arg("method") = "getam",
      py::arg("fusion") = "sum", "one normalized map per 0-based class index");

  m.def(
      "complete_labels",
      [](const F64Array& maps, std::vector<int> present, const U8Array& saliency,
         const F64Array& image, double alpha, double gamma, bool pamr, int pamr_iterations) {
        MiningConfig cfg;
        cfg.alpha = alpha;
        cfg.gamma = gamma;
        cfg.pamr = pamr;
        cfg.pamr_iterations = pamr_iterations;
        return to_numpy(complete_labels(to_tensor(maps), present, to_labels(saliency),
                                        to_tensor(image), cfg));
      },
      py::arg("maps"), py::arg("present"), py::arg("saliency"), py::arg("image"),
      py::arg("alpha") = 0.9, py::arg("gamma") = 4.0, py::arg("pamr") = true,
      py::arg("pamr_iterations") = 10);

  m.def(
      "miou",
      [](const U8Array& pred, const U8Array& gt, std::size_t n_classes, bool strict) {
        const auto r = miou(to_labels(pred), to_labels(gt), n_classes, strict);
        return py::make_tuple(r.mean, r.iou);
      },
      py::arg("pred"), py::arg("gt"), py::arg("n_classes"),
      py::arg("count_unknown_as_error") = false, "(mean IoU, per-class IoU with NaN for excluded)");

  m.def(
      "l_seg",
      [](const F64Array& logits, const U8Array& labels) {
        Tape t;
        return l_seg(t.constant(to_tensor(logits)), to_labels(labels)).value()[0];
      },
      py::arg("logits"), py::arg("labels"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("total_epochs", &TrainConfig::total_epochs)
      .def_readwrite("phase1_epochs", &TrainConfig::phase1_epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("sal_weight", &TrainConfig::sal_weight)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("probe_epochs", &TrainConfig::probe_epochs)
      .def_property(
          "alpha", [](const TrainConfig& c) { return c.mining.alpha; },
          [](TrainConfig& c, double a) { c.mining.alpha = a; })
      .def_property(
          "pamr_iterations", [](const TrainConfig& c) { return c.mining.pamr_iterations; },
          [](TrainConfig& c, int n) { c.mining.pamr_iterations = n; });

  m.def(
      "run_training",
      [](VisionTransformer& model, const std::vector<Sample>& train, const TrainConfig& cfg,
         const std::string& out_dir) {
        const auto r = run_training(model, train, cfg, out_dir);
        return py::make_tuple(format_metrics_csv(r.log), r.epoch_mean_l_cls);
      },
      py::arg("model"), py::arg("train"), py::arg("config") = TrainConfig{},
      py::arg("out_dir") = "", "returns (metrics CSV text, mean l_cls per epoch)");

  m.def(
      "classification_accuracy",
      [](const VisionTransformer& model, const std::vector<Sample>& samples) {
        return classification_accuracy(model, samples).label_accuracy;
      },
      py::arg("model"), py::arg("samples"));

  m.def(
      "pseudo_label_miou",
      [](const VisionTransformer& model, const std::vector<Sample>& samples,
         const std::string& method, const std::string& fusion, double alpha) {
        MiningConfig mc;
        mc.alpha = alpha;
        return evaluate_pseudo_labels(model, samples, parse_method(method), parse_fusion(fusion), mc)
            .iou.mean;
      },
      py::arg("model"), py::arg("samples"), py::arg("method") = "getam", py::arg("fusion") = "sum",
      py::arg("alpha") = 0.9);

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        std::vector<py::dict> rows;
        for (const auto& r : run_model_gradcheck(seed, gradcheck_toy_config(seed))) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["checked"] = r.checked;
          d["passed"] = r.passed();
          rows.push_back(d);
        }
        return rows;
      },
      py::arg("seed") = 7);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "runs the getam command line; returns (exit code, stdout, stderr)");
}
