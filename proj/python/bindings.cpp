#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "attnlens/attribution.hpp"
#include "attnlens/evaluation.hpp"
#include "attnlens/io.hpp"
#include "attnlens/model.hpp"
#include "attnlens/selftest.hpp"

namespace py = pybind11;
using namespace attnlens;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
        shape.push_back(static_cast<int>(arr.shape(i)));
    }
    std::vector<Scalar> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> arr(shape);
    std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
    return arr;
}

WeightStore store_from_dict(const py::dict& weights) {
    WeightStore store;
    for (auto item : weights) {
        store.set(py::cast<std::string>(item.first),
                  tensor_from_array(py::cast<py::array_t<double, py::array::c_style |
                                                                      py::array::forcecast>>(
                      item.second)));
    }
    return store;
}

py::dict dict_from_store(const WeightStore& store) {
    py::dict out;
    for (const auto& [name, tensor] : store.all()) {
        out[py::str(name)] = array_from_tensor(tensor);
    }
    return out;
}

UpsampleMethod upsample_from_name(const std::string& name) {
    if (name == "nearest") return UpsampleMethod::nearest;
    if (name == "bilinear") return UpsampleMethod::bilinear;
    throw ConfigError("unknown upsample method: " + name);
}

AttributionOptions options_from_kwargs(int start_stage, bool use_std_scaling,
                                       bool use_sum_normalize, bool use_gradients,
                                       const std::optional<int>& target_class) {
    AttributionOptions opts;
    opts.start_stage = start_stage;
    opts.use_std_scaling = use_std_scaling;
    opts.use_sum_normalize = use_sum_normalize;
    opts.use_gradients = use_gradients;
    if (target_class) {
        opts.target = TargetMode::specified;
        opts.target_class = *target_class;
    }
    return opts;
}

std::vector<LabeledSample> samples_from_list(const py::list& samples) {
    std::vector<LabeledSample> out;
    for (auto item : samples) {
        const py::dict d = py::cast<py::dict>(item);
        LabeledSample s;
        s.image = tensor_from_array(
            py::cast<py::array_t<double, py::array::c_style | py::array::forcecast>>(d["image"]));
        s.label = py::cast<int>(d["label"]);
        if (d.contains("mask") && !d["mask"].is_none()) {
            s.mask = tensor_from_array(
                py::cast<py::array_t<double, py::array::c_style | py::array::forcecast>>(
                    d["mask"]));
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "attention attribution for toy ViT/Swin transformers";

    py::register_exception<Error>(m, "AttnlensError");

    py::class_<ModelConfig>(m, "ModelConfig")
        .def_static("vit_toy", &ModelConfig::vit_toy)
        .def_static("swin_toy", &ModelConfig::swin_toy)
        .def_static("from_json", &config_from_json)
        .def("to_json", &config_to_json)
        .def_property_readonly("variant",
                               [](const ModelConfig& c) {
                                   return c.variant == Variant::vit ? "vit" : "swin";
                               })
        .def_readonly("image_size", &ModelConfig::image_size)
        .def_readonly("patch_size", &ModelConfig::patch_size)
        .def_readonly("embed_dim", &ModelConfig::embed_dim)
        .def_readonly("heads", &ModelConfig::heads)
        .def_readonly("num_classes", &ModelConfig::num_classes)
        .def_readonly("stage_depths", &ModelConfig::stage_depths)
        .def_readonly("window_side", &ModelConfig::window_side)
        .def("stages", &ModelConfig::stages)
        .def("grid_side", &ModelConfig::grid_side)
        .def("tokens", &ModelConfig::tokens);

    py::class_<Model>(m, "Model")
        .def(py::init([](const ModelConfig& cfg, const py::dict& weights) {
                 return Model(cfg, store_from_dict(weights));
             }),
             py::arg("config"), py::arg("weights"))
        .def_property_readonly("config", &Model::config)
        .def("logits",
             [](const Model& model, const py::array_t<double, py::array::c_style |
                                                                  py::array::forcecast>& image) {
                 return array_from_tensor(model.forward(tensor_from_array(image)).logits);
             })
        .def("predict",
             [](const Model& model, const py::array_t<double, py::array::c_style |
                                                                  py::array::forcecast>& image) {
                 return predict(model.forward(tensor_from_array(image)).logits);
             })
        .def(
            "attribute",
            [](const Model& model,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
               int start_stage, bool use_std_scaling, bool use_sum_normalize, bool use_gradients,
               const std::optional<int>& target_class, const std::string& upsample_method) {
                const AttributionResult result =
                    attribute(model, tensor_from_array(image),
                              options_from_kwargs(start_stage, use_std_scaling, use_sum_normalize,
                                                  use_gradients, target_class),
                              upsample_from_name(upsample_method));
                py::dict out;
                out["grid"] = array_from_tensor(result.heatmap.grid);
                out["pixels"] = array_from_tensor(result.heatmap.pixels);
                out["relevance"] = array_from_tensor(result.relevance.matrix.values);
                out["predicted"] = result.predicted;
                out["target_class"] = result.target_class;
                out["degenerate"] = result.heatmap.degenerate;
                return out;
            },
            py::arg("image"), py::arg("start_stage") = -1, py::arg("use_std_scaling") = true,
            py::arg("use_sum_normalize") = true, py::arg("use_gradients") = true,
            py::arg("target_class") = std::nullopt, py::arg("upsample") = "bilinear")
        .def("rollout",
             [](const Model& model, const py::array_t<double, py::array::c_style |
                                                                  py::array::forcecast>& image) {
                 return array_from_tensor(rollout(model.forward(tensor_from_array(image))));
             });

    m.def("random_weights",
          [](const ModelConfig& cfg, unsigned long long seed, Scalar lo, Scalar hi) {
              return dict_from_store(random_weights(cfg, seed, lo, hi));
          },
          py::arg("config"), py::arg("seed"), py::arg("lo") = -0.05, py::arg("hi") = 0.05);

    m.def("fuse_heads", [](const py::list& attn, const py::list& grad) {
        std::vector<Tensor> a, g;
        for (auto item : attn)
            a.push_back(tensor_from_array(
                py::cast<py::array_t<double, py::array::c_style | py::array::forcecast>>(item)));
        for (auto item : grad)
            g.push_back(tensor_from_array(
                py::cast<py::array_t<double, py::array::c_style | py::array::forcecast>>(item)));
        return array_from_tensor(fuse_heads(a, g));
    });
    m.def("scale_by_token_std",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fused,
             const std::vector<Scalar>& token_std) {
              return array_from_tensor(scale_by_token_std(tensor_from_array(fused), token_std));
          });
    m.def("sum_normalize",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fused) {
              const NormalizeResult r = sum_normalize(tensor_from_array(fused));
              return py::make_tuple(array_from_tensor(r.value), r.degenerate);
          });
    m.def("block_update",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& r,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& fused) {
              return array_from_tensor(block_update(tensor_from_array(r), tensor_from_array(fused)));
          });
    m.def("merge_rows",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& r,
             const std::vector<std::vector<int>>& groups) {
              MergeMap mm;
              mm.groups = groups;
              return array_from_tensor(merge_rows(tensor_from_array(r), mm));
          });
    m.def("upsample",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& grid, int h,
             int w, const std::string& method) {
              return array_from_tensor(
                  upsample(tensor_from_array(grid), h, w, upsample_from_name(method)));
          },
          py::arg("grid"), py::arg("h"), py::arg("w"), py::arg("method") = "bilinear");

    m.def("make_synthetic_dataset",
          [](unsigned long long seed, int n, int grid, Scalar noise) {
              py::list out;
              for (const LabeledSample& s : make_synthetic_dataset(seed, n, grid, noise)) {
                  py::dict d;
                  d["image"] = array_from_tensor(s.image);
                  d["label"] = s.label;
                  d["mask"] = s.mask ? py::object(array_from_tensor(*s.mask)) : py::none();
                  out.append(d);
              }
              return out;
          },
          py::arg("seed"), py::arg("n"), py::arg("grid"), py::arg("noise") = 0.1);
    m.def("perturb_image",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& pixel_map,
             Scalar fraction, const std::string& polarity, Scalar fill) {
              return array_from_tensor(perturb_image(
                  tensor_from_array(image), tensor_from_array(pixel_map), fraction,
                  polarity == "negative" ? Polarity::negative : Polarity::positive, fill));
          },
          py::arg("image"), py::arg("pixel_map"), py::arg("fraction"),
          py::arg("polarity") = "positive", py::arg("fill") = 0.0);
    m.def("binarize",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pixel_map) {
              return array_from_tensor(binarize(tensor_from_array(pixel_map)));
          });
    m.def("seg_metrics",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pixel_map,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& gt) {
              const SegMetrics s = seg_metrics(tensor_from_array(pixel_map), tensor_from_array(gt));
              py::dict d;
              d["miou"] = s.miou;
              d["map"] = s.map;
              d["pixel_acc"] = s.pixel_acc;
              d["mf1"] = s.mf1;
              return d;
          });
    m.def("trapezoid_auc", &trapezoid_auc);
    m.def("perturbation_curve",
          [](const Model& model, const py::list& samples, int start_stage, bool use_std_scaling,
             bool use_sum_normalize, bool use_gradients, const std::string& polarity,
             const std::string& target, const std::string& upsample_method, Scalar fill) {
              const PerturbationResult r = perturbation_curve(
                  model, samples_from_list(samples),
                  options_from_kwargs(start_stage, use_std_scaling, use_sum_normalize,
                                      use_gradients, std::nullopt),
                  polarity == "negative" ? Polarity::negative : Polarity::positive,
                  target == "target" ? EvalTarget::target : EvalTarget::top,
                  upsample_from_name(upsample_method), fill);
              py::dict d;
              d["fractions"] = r.fractions;
              d["accuracy"] = r.accuracy;
              d["auc"] = r.auc;
              return d;
          },
          py::arg("model"), py::arg("samples"), py::arg("start_stage") = -1,
          py::arg("use_std_scaling") = true, py::arg("use_sum_normalize") = true,
          py::arg("use_gradients") = true, py::arg("polarity") = "negative",
          py::arg("target") = "top", py::arg("upsample") = "bilinear", py::arg("fill") = 0.0);
    m.def("evaluate_segmentation",
          [](const Model& model, const py::list& samples, int start_stage, bool use_std_scaling,
             bool use_sum_normalize, bool use_gradients, const std::string& upsample_method) {
              const SegMetrics s = evaluate_segmentation(
                  model, samples_from_list(samples),
                  options_from_kwargs(start_stage, use_std_scaling, use_sum_normalize,
                                      use_gradients, std::nullopt),
                  upsample_from_name(upsample_method));
              py::dict d;
              d["miou"] = s.miou;
              d["map"] = s.map;
              d["pixel_acc"] = s.pixel_acc;
              d["mf1"] = s.mf1;
              return d;
          },
          py::arg("model"), py::arg("samples"), py::arg("start_stage") = -1,
          py::arg("use_std_scaling") = true, py::arg("use_sum_normalize") = true,
          py::arg("use_gradients") = true, py::arg("upsample") = "bilinear");

    m.def("load_weights", [](const std::string& path) { return dict_from_store(load_weights(path)); });
    m.def("save_weights", [](const std::string& path, const py::dict& weights) {
        save_weights(path, store_from_dict(weights));
    });
    m.def("load_config", &load_config);
    m.def("load_image", [](const std::string& path) { return array_from_tensor(load_image(path)); });

    m.def("selftest",
          [](unsigned long long seed) {
              bool ok = true;
              py::list lines;
              for (const CheckResult& r : run_selftest(seed)) {
                  ok &= r.passed;
                  lines.append(py::make_tuple(r.name, r.passed, r.detail));
              }
              return py::make_tuple(ok, lines);
          },
          py::arg("seed") = 1);
}
