#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "angioseg/annio.hpp"
#include "angioseg/ensemble.hpp"
#include "angioseg/error.hpp"
#include "angioseg/imgproc.hpp"
#include "angioseg/lossmetric.hpp"
#include "angioseg/nnet.hpp"
#include "angioseg/pipeline.hpp"
#include "angioseg/postprocess.hpp"
#include "angioseg/splitsample.hpp"
#include "angioseg/synthgen.hpp"

namespace py = pybind11;
using namespace angioseg;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <class Tag>
Grid<Tag> to_grid(const U8Array& a) {
    if (a.ndim() != 2) throw Error(ErrorKind::dimension, "expected a 2-D uint8 array");
    Grid<Tag> g(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), 0);
    std::copy(a.data(), a.data() + a.size(), g.data.begin());
    return g;
}

template <class Tag>
U8Array from_grid(const Grid<Tag>& g) {
    U8Array a({g.height, g.width});
    std::copy(g.data.begin(), g.data.end(), a.mutable_data());
    return a;
}

ProbabilityMap to_probmap(const F32Array& a) {
    if (a.ndim() != 3) throw Error(ErrorKind::dimension, "expected a C x H x W float array");
    ProbabilityMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

F32Array from_probmap(const ProbabilityMap& m) {
    F32Array a({m.channels, m.height, m.width});
    std::copy(m.data.begin(), m.data.end(), a.mutable_data());
    return a;
}

Shape3 shape_of(const F64Array& a) {
    if (a.ndim() != 3) throw Error(ErrorKind::dimension, "expected a C x H x W float64 array");
    return {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
}

py::tuple loss_tuple(const LossResult& r, const F64Array& probs) {
    F64Array g(std::vector<py::ssize_t>(probs.shape(), probs.shape() + probs.ndim()));
    std::copy(r.grad.begin(), r.grad.end(), g.mutable_data());
    return py::make_tuple(r.loss, g);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Coronary vessel segmentation pipeline core";

    static py::exception<Error> error_type(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error_type, e.what());
        }
    });

    // annotations and masks
    m.def("rasterize_polygon", [](const std::vector<std::pair<double, double>>& pts, int width, int height) {
        Polygon poly;
        for (auto [x, y] : pts) poly.push_back({x, y});
        return from_grid(rasterize_polygon(poly, width, height));
    }, py::arg("points"), py::arg("width"), py::arg("height"));
    m.def("coco_to_masks", [](const std::string& text, bool first_wins) {
        const AnnotationSet set = parse_coco(text);
        py::dict out;
        for (const auto& [id, info] : set.images) {
            out[py::int_(id)] = from_grid(build_class_mask(set, id, first_wins ? OverlapPolicy::first_wins : OverlapPolicy::last_wins));
        }
        return out;
    }, py::arg("coco_json"), py::arg("first_wins") = false);
    m.def("encode_pgm", [](const U8Array& img) {
        const auto g = to_grid<GrayTag>(img);
        const auto bytes = encode_pgm(g.width, g.height, g.data);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    });
    m.def("decode_pgm", [](const py::bytes& b) {
        const std::string s = b;
        return from_grid(decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
    });

    // image processing
    m.def("clahe", [](const U8Array& img, double clip_limit, int tiles) {
        return from_grid(clahe(to_grid<GrayTag>(img), clip_limit, tiles));
    }, py::arg("image"), py::arg("clip_limit") = 2.0, py::arg("tiles") = 8);
    m.def("gabor", [](const U8Array& img, double wavelength, double orientation, double sigma, double aspect) {
        return from_grid(gabor(to_grid<GrayTag>(img), GaborParams{wavelength, orientation, sigma, aspect}));
    }, py::arg("image"), py::arg("wavelength") = 8.0, py::arg("orientation") = 0.0, py::arg("sigma") = 3.0,
       py::arg("aspect") = 0.5);

    // split and weighting
    m.def("allocate_validation", [](const std::vector<std::pair<int, std::int64_t>>& counts, std::int64_t target) {
        return allocate_validation(counts, target);
    }, py::arg("class_counts"), py::arg("target"));
    m.def("dataset_stats", [](const std::vector<U8Array>& masks) {
        std::vector<std::pair<std::int64_t, ClassMask>> items;
        for (std::size_t i = 0; i < masks.size(); ++i) items.emplace_back(static_cast<std::int64_t>(i + 1), to_grid<ClassTag>(masks[i]));
        return format_stats_tsv(dataset_stats(index_from_masks(items)));
    });

    // losses and metrics
    m.def("combo_loss", [](const F64Array& probs, const U8Array& target, double alpha, double gamma) {
        ComboLossConfig cfg;
        cfg.alpha = alpha;
        cfg.gamma = gamma;
        const auto r = combo_loss(std::span(probs.data(), probs.size()), shape_of(probs),
                                  PixelTargets::from_mask(to_grid<ClassTag>(target)), cfg);
        return loss_tuple(r, probs);
    }, py::arg("probs"), py::arg("target"), py::arg("alpha") = 0.5, py::arg("gamma") = 2.0);
    m.def("image_f1", [](const U8Array& pred, const U8Array& gt) {
        return image_f1(to_grid<ClassTag>(pred), to_grid<ClassTag>(gt)).f1;
    });
    m.def("mean_f1", [](const std::vector<double>& s) { return mean_f1(s); });

    // network
    py::class_<ModelState>(m, "Model")
        .def_property_readonly("parameter_count", &ModelState::parameter_count)
        .def_property_readonly("out_classes", [](const ModelState& s) { return s.config.out_classes; })
        .def_property_readonly("completed_stage", [](const ModelState& s) { return s.completed_stage; })
        .def("forward", [](const ModelState& s, const U8Array& img) {
            const auto r = forward(s, to_grid<GrayTag>(img));
            return py::make_tuple(from_probmap(to_probability_map(r)), r.view_probs);
        })
        .def("save", [](const ModelState& s, const std::string& path) { save_checkpoint(s, path); });
    m.def("init_model", [](int height, int width, int base_channels, int depth, int out_classes, std::uint64_t seed) {
        NetConfig cfg;
        cfg.height = height;
        cfg.width = width;
        cfg.base_channels = base_channels;
        cfg.depth = depth;
        cfg.out_classes = out_classes;
        cfg.seed = seed;
        return init_model(cfg);
    }, py::arg("height") = 64, py::arg("width") = 64, py::arg("base_channels") = 8, py::arg("depth") = 2,
       py::arg("out_classes") = 2, py::arg("seed") = 0);
    m.def("load_checkpoint", [](const std::string& path) { return load_checkpoint(path); });
    m.def("discriminative_lrs", &discriminative_lrs, py::arg("base"), py::arg("groups"));

    // ensemble and post-processing
    m.def("ensemble_average", [](const std::vector<F32Array>& maps, const std::vector<double>& weights) {
        std::vector<ProbabilityMap> pm;
        for (const auto& a : maps) pm.push_back(to_probmap(a));
        return from_probmap(ensemble_average(pm, weights));
    }, py::arg("maps"), py::arg("weights") = std::vector<double>{});
    m.def("decode_argmax", [](const F32Array& map) { return from_grid(decode_argmax(to_probmap(map))); });
    m.def("refine_mask", [](const U8Array& mask, int kernel, std::int64_t min_size, std::int64_t max_size, bool fill,
                            int passes) {
        RefineConfig cfg;
        cfg.kernel = kernel;
        cfg.min_size = min_size;
        cfg.max_size = max_size;
        cfg.fill_holes = fill;
        cfg.passes = passes;
        return from_grid(refine_mask(to_grid<ClassTag>(mask), cfg));
    }, py::arg("mask"), py::arg("kernel") = 3, py::arg("min_size") = 64, py::arg("max_size") = 8192,
       py::arg("fill_holes") = true, py::arg("passes") = 1);

    // synthetic data
    m.def("synthesize", [](int count, int width, int height, const std::vector<int>& classes, int planes, std::uint64_t seed) {
        SynthConfig cfg;
        cfg.count = count;
        cfg.width = width;
        cfg.height = height;
        cfg.classes = classes;
        cfg.planes = planes;
        cfg.seed = seed;
        const SynthDataset data = generate(cfg);
        py::list images, masks, views;
        for (const auto& s : data.samples) {
            images.append(from_grid(s.image));
            masks.append(from_grid(s.mask));
            views.append(s.plane);
        }
        py::dict out;
        out["images"] = images;
        out["masks"] = masks;
        out["planes"] = views;
        out["coco_json"] = data.coco_json;
        return out;
    }, py::arg("count") = 10, py::arg("width") = 64, py::arg("height") = 64,
       py::arg("classes") = std::vector<int>{1, 2, 3, 4, 5, 6}, py::arg("planes") = 3, py::arg("seed") = 0);
}
