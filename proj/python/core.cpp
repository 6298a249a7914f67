// Python bindings for the cxrpatch core.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cxr/error.hpp"
#include "cxr/labels.hpp"
#include "cxr/lunggrid.hpp"
#include "cxr/metrics.hpp"
#include "cxr/nnet.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/segbaseline.hpp"
#include "cxr/synthetic.hpp"

namespace py = pybind11;
using namespace cxr;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using RectTuple = std::tuple<int, int, int, int>;

Image to_image(const U8Array& a) {
    if (a.ndim() != 2) throw Error(ErrorCode::Shape, "expected a 2-D uint8 array");
    const int h = int(a.shape(0)), w = int(a.shape(1));
    return Image(w, h, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

U8Array to_array(int w, int h, const std::vector<std::uint8_t>& px) {
    U8Array out({h, w});
    std::copy(px.begin(), px.end(), out.mutable_data());
    return out;
}

Mask to_mask(const U8Array& a) {
    const Image img = to_image(a);
    Mask m(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) m.bits[i] = img.data[i] ? 1 : 0;
    return m;
}

RectTuple tup(const Rect& r) { return {r.x, r.y, r.w, r.h}; }
Rect rect(const RectTuple& t) { return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)}; }

GridSpec spec_for(int patches, double overlap) {
    GridSpec g = patches == 6 ? GridSpec::six(overlap) : GridSpec::sixteen(overlap);
    if (patches != 6 && patches != 16) throw Error(ErrorCode::InvalidConfig, "patches must be 16 or 6");
    g.validate();
    return g;
}

std::vector<ScoredItem> items(const std::vector<double>& scores, const std::vector<bool>& truth) {
    if (scores.size() != truth.size()) throw Error(ErrorCode::Shape, "scores and truth differ in length");
    std::vector<ScoredItem> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i].score = scores[i];
        out[i].truth = truth[i];
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Lung-patch nodule workbench core";

    static py::exception<Error> cxr_error(m, "CxrError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object err = cxr_error;
            py::object inst = err(e.what());
            inst.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(err.ptr(), inst.ptr());
        }
    });

    m.def("load_pgm", [](const std::filesystem::path& p) {
        const Image img = load_pgm(p);
        return to_array(img.width, img.height, img.data);
    });
    m.def("save_pgm", [](const U8Array& a, const std::filesystem::path& p) { save_pgm(to_image(a), p); });

    m.def(
        "segment_lungs",
        [](const U8Array& a, int open_radius, int close_radius) {
            SegConfig cfg;
            cfg.open_radius = open_radius;
            cfg.close_radius = close_radius;
            const Mask mk = segment_lungs(to_image(a), cfg);
            return to_array(mk.width, mk.height, mk.bits);
        },
        py::arg("image"), py::arg("open_radius") = 2, py::arg("close_radius") = 4);
    m.def("otsu_threshold", [](const U8Array& a) { return otsu_threshold(to_image(a)); });
    m.def("iou", [](const U8Array& a, const U8Array& b) { return iou(to_mask(a), to_mask(b)); });

    m.def("lung_boxes", [](const U8Array& a) {
        const LungBoxes b = mask_to_lung_boxes(to_mask(a));
        return std::pair{tup(b.left), tup(b.right)};
    });
    m.def(
        "build_grid",
        [](const RectTuple& left, const RectTuple& right, int patches, double overlap) {
            std::vector<RectTuple> out;
            for (const Rect& r : build_grid(rect(left), rect(right), spec_for(patches, overlap)).all()) out.push_back(tup(r));
            return out;
        },
        py::arg("left"), py::arg("right"), py::arg("patches") = 16, py::arg("overlap") = 0.25);
    m.def(
        "assign_patch_labels",
        [](const RectTuple& left, const RectTuple& right, const std::vector<RectTuple>& nodules, int patches,
           double overlap, bool all_intersecting) {
            std::vector<NoduleBox> boxes;
            for (std::size_t i = 0; i < nodules.size(); ++i) boxes.push_back({rect(nodules[i]), std::to_string(i)});
            const PatchGrid g = build_grid(rect(left), rect(right), spec_for(patches, overlap));
            return assign_patch_labels(g, boxes, all_intersecting ? LabelMode::AllIntersecting : LabelMode::Argmax);
        },
        py::arg("left"), py::arg("right"), py::arg("nodules"), py::arg("patches") = 16, py::arg("overlap") = 0.25,
        py::arg("all_intersecting") = false);

    m.def("auroc", [](const std::vector<double>& s, const std::vector<bool>& t) { return auroc(items(s, t)); });
    m.def("aupr", [](const std::vector<double>& s, const std::vector<bool>& t) { return aupr(items(s, t)); });
    m.def(
        "sens_spec",
        [](const std::vector<double>& s, const std::vector<bool>& t, double threshold) {
            const SensSpec r = sens_spec(items(s, t), threshold);
            return std::pair{r.sensitivity, r.specificity};
        },
        py::arg("scores"), py::arg("truth"), py::arg("threshold") = 0.9);

    m.def(
        "lr_at",
        [](int epoch, int total_epochs, int warmup_epochs, double base_lr, double eta_min) {
            TrainConfig cfg;
            cfg.total_epochs = total_epochs;
            cfg.warmup_epochs = warmup_epochs;
            cfg.base_lr = base_lr;
            cfg.eta_min = eta_min;
            cfg.validate();
            return lr_at(cfg, epoch);
        },
        py::arg("epoch"), py::arg("total_epochs") = 60, py::arg("warmup_epochs") = 20, py::arg("base_lr") = 0.001,
        py::arg("eta_min") = 0.0);

    m.def(
        "generate_synthetic",
        [](int n, std::uint64_t seed, const std::filesystem::path& out_dir, bool masks) {
            std::vector<std::string> ids;
            for (const auto& c : generate_synthetic(n, seed, out_dir, masks)) ids.push_back(c.case_id);
            return ids;
        },
        py::arg("n"), py::arg("seed"), py::arg("out_dir"), py::arg("masks") = false);

    py::class_<Checkpoint>(m, "Model")
        .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
        .def_property_readonly("threshold", [](const Checkpoint& c) { return c.config.threshold; })
        .def_property_readonly("base_channels", [](const Checkpoint& c) { return c.net.base_channels; })
        .def(
            "predict_image",
            [](const Checkpoint& c, const U8Array& a) {
                const PreprocessConfig pp = PreprocessConfig::from_json(c.preprocess);
                const CaseGeometry g = locate_image(to_image(a), std::nullopt, pp.grid);
                std::vector<double> probs;
                {
                    py::gil_scoped_release release;
                    for (const Tensor& t : extract_patches(g.image, g.grid, pp))
                        probs.push_back(predict(c.net, t, c.config.threshold).p_positive);
                }
                return probs;
            },
            "Positive probability for every patch of a radiograph.");
}
