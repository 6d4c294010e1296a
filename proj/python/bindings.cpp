#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "centerface/decoder.hpp"
#include "centerface/evaluator.hpp"
#include "centerface/gradcheck.hpp"
#include "centerface/model.hpp"
#include "centerface/synth.hpp"
#include "centerface/targets.hpp"
#include "centerface/trainer.hpp"

namespace py = pybind11;
using namespace centerface;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
    Array out({t.channels, t.height, t.width});
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const Array& a, const char* what) {
    if (a.ndim() != 3) throw py::value_error(std::string(what) + " must have shape (C, H, W)");
    Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
}

py::dict prediction_dict(const PredictionPack& p) {
    py::dict d;
    d["heatmap"] = to_numpy(p.heatmap);
    d["offsets"] = to_numpy(p.offsets);
    d["sizes"] = to_numpy(p.sizes);
    d["embeddings"] = to_numpy(p.embeddings);
    return d;
}

// Network parameters; the grid follows from the image passed in.
struct Model {
    ModelParams params;

    py::dict predict(const Array& image) const { return prediction_dict(centerface::predict(params, from_numpy(image, "image"))); }

    std::vector<Detection> detect(const Array& image, const DecodeConfig& cfg) const {
        const Tensor img = from_numpy(image, "image");
        const GridConfig grid{img.height, img.width, params.config.stride(), params.config.num_classes};
        return decode(centerface::predict(params, img), cfg, grid);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Center-heatmap face and masked-face detection";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    py::class_<BBox>(m, "BBox")
        .def(py::init([](double x1, double y1, double x2, double y2, int class_id) {
                 return BBox{x1, y1, x2, y2, class_id};
             }),
             py::arg("x1"), py::arg("y1"), py::arg("x2"), py::arg("y2"), py::arg("class_id") = 0)
        .def_readwrite("x1", &BBox::x1)
        .def_readwrite("y1", &BBox::y1)
        .def_readwrite("x2", &BBox::x2)
        .def_readwrite("y2", &BBox::y2)
        .def_readwrite("class_id", &BBox::class_id)
        .def_property_readonly("width", &BBox::width)
        .def_property_readonly("height", &BBox::height)
        .def(py::self == py::self)
        .def("__repr__", [](const BBox& b) {
            return "BBox(" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " + std::to_string(b.x2) +
                   ", " + std::to_string(b.y2) + ", class_id=" + std::to_string(b.class_id) + ")";
        });

    py::class_<GridConfig>(m, "GridConfig")
        .def(py::init([](int height, int width, int stride, int num_classes) {
                 GridConfig g{height, width, stride, num_classes};
                 g.validate();
                 return g;
             }),
             py::arg("height") = 64, py::arg("width") = 64, py::arg("stride") = kDefaultStride,
             py::arg("num_classes") = kDefaultNumClasses)
        .def_readonly("height", &GridConfig::height)
        .def_readonly("width", &GridConfig::width)
        .def_readonly("stride", &GridConfig::stride)
        .def_readonly("num_classes", &GridConfig::num_classes);

    py::class_<SceneSpec>(m, "SceneSpec")
        .def(py::init<>())
        .def_readwrite("height", &SceneSpec::height)
        .def_readwrite("width", &SceneSpec::width)
        .def_readwrite("stride", &SceneSpec::stride)
        .def_readwrite("min_objects", &SceneSpec::min_objects)
        .def_readwrite("max_objects", &SceneSpec::max_objects)
        .def_readwrite("min_size", &SceneSpec::min_size)
        .def_readwrite("max_size", &SceneSpec::max_size)
        .def_readwrite("masked_probability", &SceneSpec::masked_probability)
        .def_readwrite("confuser_probability", &SceneSpec::confuser_probability)
        .def_readwrite("noise", &SceneSpec::noise)
        .def_readwrite("seed", &SceneSpec::seed)
        .def("grid", &SceneSpec::grid);

    py::class_<Sample>(m, "Sample")
        .def_property_readonly("image", [](const Sample& s) { return to_numpy(s.image); })
        .def_readonly("boxes", &Sample::boxes)
        .def_readonly("occluded", &Sample::occluded);

    py::class_<Detection>(m, "Detection")
        .def(py::init([](const BBox& box, double score) { return Detection{box, score}; }), py::arg("box"),
             py::arg("score"))
        .def_readwrite("box", &Detection::box)
        .def_readwrite("score", &Detection::score);

    py::class_<DecodeConfig>(m, "DecodeConfig")
        .def(py::init<>())
        .def_readwrite("score_threshold", &DecodeConfig::score_threshold)
        .def_readwrite("top_k", &DecodeConfig::top_k)
        .def_readwrite("peak_window", &DecodeConfig::peak_window);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_property(
            "cbam", [](const ModelConfig& c) { return std::string(to_string(c.cbam)); },
            [](ModelConfig& c, const std::string& s) { c.cbam = parse_cbam_order(s); })
        .def_readwrite("embedding_dim", &ModelConfig::embedding_dim)
        .def_property_readonly("stride", &ModelConfig::stride);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("iterations", &TrainConfig::iterations)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("lr_milestones", &TrainConfig::lr_milestones)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("enable_triplet", &TrainConfig::enable_triplet)
        .def_readwrite("enable_consistency", &TrainConfig::enable_consistency)
        .def_readwrite("localization_consistency", &TrainConfig::localization_consistency);

    py::class_<Model>(m, "Model")
        .def(py::init([](const ModelConfig& cfg, std::uint64_t seed) { return Model{init_params(cfg, seed)}; }),
             py::arg("config") = ModelConfig{}, py::arg("seed") = 0)
        .def("predict", &Model::predict, py::arg("image"))
        .def("detect", &Model::detect, py::arg("image"), py::arg("config") = DecodeConfig{})
        .def("save", [](const Model& mdl, const std::filesystem::path& p) { save_checkpoint(mdl.params, p); });

    m.def("load_model", [](const std::filesystem::path& p) { return Model{load_checkpoint(p)}; }, py::arg("path"));

    m.def("corner_radius", &corner_radius, py::arg("width"), py::arg("height"),
          py::arg("min_overlap") = kDefaultMinOverlap);
    m.def("gaussian_sigma", &gaussian_sigma, py::arg("width"), py::arg("height"),
          py::arg("min_overlap") = kDefaultMinOverlap);

    m.def("generate_scene", &generate_scene, py::arg("spec"), py::arg("index"));
    m.def("generate_dataset", &generate_dataset, py::arg("spec"), py::arg("n_images"));

    m.def(
        "encode_targets",
        [](const std::vector<BBox>& boxes, const GridConfig& grid) {
            const TargetPack t = encode_targets(boxes, grid);
            py::array_t<bool> mask({t.grid_height, t.grid_width});
            std::copy(t.mask.begin(), t.mask.end(), mask.mutable_data());
            py::list objects;
            for (const ObjectTarget& o : t.objects) {
                py::dict d;
                d["cell"] = py::make_tuple(o.cell.i, o.cell.j);
                d["class_id"] = o.class_id;
                d["offset"] = py::make_tuple(o.offset.dx, o.offset.dy);
                d["size"] = py::make_tuple(o.width, o.height);
                objects.append(d);
            }
            py::dict out;
            out["heatmap"] = to_numpy(t.heatmap);
            out["mask"] = mask;
            out["objects"] = objects;
            return out;
        },
        py::arg("boxes"), py::arg("grid"));

    m.def(
        "decode",
        [](const Array& heatmap, const Array& offsets, const Array& sizes, const GridConfig& grid,
           const DecodeConfig& cfg) {
            PredictionPack p;
            p.heatmap = from_numpy(heatmap, "heatmap");
            p.offsets = from_numpy(offsets, "offsets");
            p.sizes = from_numpy(sizes, "sizes");
            return decode(p, cfg, grid);
        },
        py::arg("heatmap"), py::arg("offsets"), py::arg("sizes"), py::arg("grid"),
        py::arg("config") = DecodeConfig{});

    m.def("iou", &iou, py::arg("a"), py::arg("b"));

    m.def(
        "evaluate",
        [](const std::vector<std::vector<Detection>>& detections, const std::vector<std::vector<BBox>>& truths,
           double iou_threshold, int num_classes) {
            if (detections.size() != truths.size()) throw py::value_error("one detection list per image expected");
            MatchCounts counts(num_classes);
            for (std::size_t k = 0; k < truths.size(); ++k) {
                counts += match_detections(detections[k], truths[k], iou_threshold, num_classes);
            }
            const EvalReport r = precision_recall(counts, iou_threshold);
            py::list rows;
            for (const ClassMetrics& c : r.per_class) {
                py::dict d;
                d["tp"] = c.counts.tp;
                d["fp"] = c.counts.fp;
                d["fn"] = c.counts.fn;
                d["precision"] = c.precision;
                d["recall"] = c.recall;
                rows.append(d);
            }
            return rows;
        },
        py::arg("detections"), py::arg("truths"), py::arg("iou_threshold") = 0.5,
        py::arg("num_classes") = kDefaultNumClasses);

    m.def(
        "gradient_suite",
        [](int instances, std::uint64_t seed) {
            GradCheckOptions o;
            o.instances = instances;
            o.seed = seed;
            py::list rows;
            for (const GradCheckEntry& e : run_gradient_suite(o)) {
                py::dict d;
                d["name"] = e.name;
                d["max_error"] = e.max_error;
                d["tolerance"] = e.tolerance;
                d["checked"] = e.checked;
                d["passed"] = e.passed();
                rows.append(d);
            }
            return rows;
        },
        py::arg("instances") = 10, py::arg("seed") = 0);

    m.def(
        "train",
        [](const std::vector<Sample>& data, const GridConfig& grid, const ModelConfig& model,
           const TrainConfig& cfg) {
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = centerface::train(data, grid, model, LossWeights{}, cfg);
            }
            std::vector<double> totals;
            for (const StepRecord& s : r.log) totals.push_back(s.loss.total);
            return py::make_tuple(Model{std::move(r.best)}, totals);
        },
        py::arg("data"), py::arg("grid"), py::arg("model") = ModelConfig{}, py::arg("config") = TrainConfig{},
        "Returns (best model, per-step total loss).");
}
