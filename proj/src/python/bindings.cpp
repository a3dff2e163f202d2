#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "crispdepth/data.hpp"
#include "crispdepth/losses.hpp"
#include "crispdepth/metrics.hpp"
#include "crispdepth/plot.hpp"
#include "crispdepth/trainer.hpp"

namespace py = pybind11;
using namespace crisp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// HxW or HxWxC numpy array -> (1,C,H,W) tensor
Tensor tensor_from(const FloatArray& arr) {
    const auto info = arr.request();
    if (info.ndim == 2) {
        Tensor t(1, 1, static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]));
        std::memcpy(t.data(), info.ptr, sizeof(float) * t.size());
        return t;
    }
    if (info.ndim == 3) {
        const int h = static_cast<int>(info.shape[0]);
        const int w = static_cast<int>(info.shape[1]);
        const int c = static_cast<int>(info.shape[2]);
        Tensor t(1, c, h, w);
        const float* src = static_cast<const float*>(info.ptr);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int k = 0; k < c; ++k)
                    t.at(0, k, y, x) = src[(static_cast<size_t>(y) * w + x) * c + k];
        return t;
    }
    throw ShapeError("expected an HxW or HxWxC array");
}

// CxHxW numpy array -> (1,C,H,W) tensor (feature maps)
Tensor tensor_from_chw(const FloatArray& arr) {
    const auto info = arr.request();
    if (info.ndim != 3) throw ShapeError("expected a CxHxW array");
    Tensor t(1, static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]),
             static_cast<int>(info.shape[2]));
    std::memcpy(t.data(), info.ptr, sizeof(float) * t.size());
    return t;
}

py::array to_numpy(const Tensor& t) {
    const int c = t.c(), h = t.h(), w = t.w();
    if (c == 1) {
        py::array_t<float> out({h, w});
        std::memcpy(out.mutable_data(), t.data(), sizeof(float) * t.size());
        return out;
    }
    py::array_t<float> out({h, w, c});
    float* dst = out.mutable_data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k)
                dst[(static_cast<size_t>(y) * w + x) * c + k] = t.at(0, k, y, x);
    return out;
}

Intrinsics intrinsics_from_dict(const py::dict& d) {
    Intrinsics k{d["fx"].cast<double>(), d["fy"].cast<double>(),
                 d["cx"].cast<double>(), d["cy"].cast<double>()};
    k.validate();
    return k;
}

Pose6 pose_from_arrays(const DoubleArray& rot, const DoubleArray& trans) {
    if (rot.size() != 3 || trans.size() != 3)
        throw ShapeError("rotation and translation must each have 3 entries");
    Pose6 p;
    for (int i = 0; i < 3; ++i) {
        p.rotation[i] = rot.data()[i];
        p.translation[i] = trans.data()[i];
    }
    return p;
}

Tensor optional_mask(const py::object& mask, const Tensor& like) {
    if (mask.is_none()) return Tensor::full(1, 1, like.h(), like.w(), 1.0f);
    Tensor m = tensor_from(mask.cast<FloatArray>());
    if (m.h() != like.h() || m.w() != like.w())
        throw ShapeError("mask shape mismatch");
    return m;
}

class Model {
public:
    explicit Model(const std::string& checkpoint_path)
        : session_(load_checkpoint(checkpoint_path)) {}

    py::array infer(const FloatArray& image) {
        const Tensor t = tensor_from(image);
        return to_numpy(session_.predict(t).depth->value);
    }
    int stride() const { return session_.config().encoder.total_stride(); }
    int64_t depth_parameters() { return count_parameters(session_.depth()); }
    int64_t pose_parameters() { return count_parameters(session_.pose()); }

private:
    TrainSession session_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "boundary-refined self-supervised monocular depth: core operations";

    py::register_exception<Error>(m, "CrispError");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint"))
        .def("infer", &Model::infer, py::arg("image"),
             "HxWx3 image in [0,1] -> HxW depth map in meters")
        .def_property_readonly("stride", &Model::stride)
        .def_property_readonly("depth_parameters", &Model::depth_parameters)
        .def_property_readonly("pose_parameters", &Model::pose_parameters);

    m.def(
        "euclidean_distance_transform",
        [](const FloatArray& mask) {
            const DoubleGrid g = euclidean_distance_transform(tensor_from(mask));
            py::array_t<double> out({g.h, g.w});
            std::memcpy(out.mutable_data(), g.v.data(), sizeof(double) * g.v.size());
            return out;
        },
        py::arg("mask"), "exact Euclidean distance to the nearest nonzero pixel");

    m.def(
        "extract_boundaries",
        [](const FloatArray& depth, double threshold) {
            return to_numpy(extract_boundaries(tensor_from(depth), threshold));
        },
        py::arg("depth"), py::arg("threshold") = 0.1);

    m.def(
        "dbe_accuracy",
        [](const FloatArray& pred, const FloatArray& gt, double threshold) -> py::object {
            bool defined = false;
            const double v =
                dbe_accuracy(tensor_from(pred), tensor_from(gt), threshold, &defined);
            if (!defined) return py::none();
            return py::float_(v);
        },
        py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.1);

    m.def(
        "standard_metrics",
        [](const FloatArray& pred, const FloatArray& gt, bool median_scale) {
            const MetricReport r =
                standard_metrics(tensor_from(pred), tensor_from(gt), median_scale);
            py::dict d;
            d["abs_rel"] = r.abs_rel;
            d["rmse"] = r.rmse;
            d["delta1"] = r.delta1;
            d["delta2"] = r.delta2;
            d["delta3"] = r.delta3;
            d["n_valid"] = r.n_valid;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("median_scale") = true);

    m.def(
        "ssim",
        [](const FloatArray& a, const FloatArray& b) {
            return to_numpy(
                ssim(ad::constant(tensor_from(a)), ad::constant(tensor_from(b)))->value);
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "view_reconstruction_loss",
        [](const FloatArray& target, const FloatArray& synth, const py::object& mask,
           float lam) {
            const Tensor t = tensor_from(target);
            return ad::value0(view_reconstruction_loss(
                ad::constant(t), ad::constant(tensor_from(synth)), optional_mask(mask, t),
                lam));
        },
        py::arg("target"), py::arg("synthesized"), py::arg("mask") = py::none(),
        py::arg("lam") = 0.85f);

    m.def(
        "geometric_consistency_loss",
        [](const FloatArray& a, const FloatArray& b, const py::object& mask) {
            const Tensor ta = tensor_from(a);
            return ad::value0(geometric_consistency_loss(
                ad::constant(ta), ad::constant(tensor_from(b)), optional_mask(mask, ta)));
        },
        py::arg("depth_a"), py::arg("depth_b"), py::arg("mask") = py::none());

    m.def(
        "boundary_alignment_loss",
        [](const FloatArray& pred, const FloatArray& pseudo, float theta, float vartheta) {
            return ad::value0(boundary_alignment_loss(ad::constant(tensor_from(pred)),
                                                      ad::constant(tensor_from(pseudo)),
                                                      theta, vartheta));
        },
        py::arg("pred"), py::arg("pseudo"), py::arg("theta") = 0.1f,
        py::arg("vartheta") = 0.1f);

    m.def(
        "semantic_information_loss",
        [](const std::vector<FloatArray>& student, const std::vector<FloatArray>& teacher,
           bool per_pixel) {
            if (student.size() != kPyramidLevels || teacher.size() != kPyramidLevels)
                throw ShapeError("expected 5 feature levels per pyramid");
            std::array<ad::Var, kPyramidLevels> s, t;
            for (int i = 0; i < kPyramidLevels; ++i) {
                s[i] = ad::constant(tensor_from_chw(student[i]));
                t[i] = ad::constant(tensor_from_chw(teacher[i]));
            }
            return ad::value0(semantic_information_loss(s, t, per_pixel));
        },
        py::arg("student"), py::arg("teacher"), py::arg("per_pixel") = false);

    m.def(
        "pose_to_matrix",
        [](const DoubleArray& rot, const DoubleArray& trans) {
            const Mat4 t = pose_to_matrix(pose_from_arrays(rot, trans));
            py::array_t<double> out({4, 4});
            std::memcpy(out.mutable_data(), t.m.data(), sizeof(double) * 16);
            return out;
        },
        py::arg("rotation"), py::arg("translation"));

    m.def(
        "warp_image",
        [](const FloatArray& source, const FloatArray& target_depth,
           const DoubleArray& rot, const DoubleArray& trans, const py::dict& intrinsics) {
            const WarpResult w = warp_image(
                ad::constant(tensor_from(source)), ad::constant(tensor_from(target_depth)),
                pose_var(pose_from_arrays(rot, trans)), intrinsics_from_dict(intrinsics));
            return py::make_tuple(to_numpy(w.synthesized->value), to_numpy(w.valid));
        },
        py::arg("source"), py::arg("target_depth"), py::arg("rotation"),
        py::arg("translation"), py::arg("intrinsics"));

    m.def(
        "warp_depth",
        [](const FloatArray& source_depth, const FloatArray& target_depth,
           const DoubleArray& rot, const DoubleArray& trans, const py::dict& intrinsics) {
            const WarpResult w = warp_depth(
                ad::constant(tensor_from(source_depth)),
                ad::constant(tensor_from(target_depth)),
                pose_var(pose_from_arrays(rot, trans)), intrinsics_from_dict(intrinsics));
            return py::make_tuple(to_numpy(w.synthesized->value),
                                  to_numpy(w.computed_depth->value), to_numpy(w.valid));
        },
        py::arg("source_depth"), py::arg("target_depth"), py::arg("rotation"),
        py::arg("translation"), py::arg("intrinsics"));

    m.def(
        "render_scene",
        [](const std::string& spec_json) {
            const std::vector<RenderedFrame> frames =
                render_scene(scene_spec_from_json_text(spec_json));
            py::list out;
            for (const RenderedFrame& f : frames) {
                py::dict d;
                d["image"] = to_numpy(f.image);
                d["depth"] = to_numpy(f.depth);
                d["seg"] = to_numpy(f.seg);
                py::array_t<double> pose({4, 4});
                std::memcpy(pose.mutable_data(), f.world_from_camera.m.data(),
                            sizeof(double) * 16);
                d["world_from_camera"] = pose;
                out.append(d);
            }
            return out;
        },
        py::arg("spec_json"), "ray-cast a synthetic scene from its JSON spec");

    m.def(
        "write_synthetic_dataset",
        [](const std::string& spec_json, const std::string& out_dir) {
            return write_synthetic_dataset(scene_spec_from_json_text(spec_json), out_dir)
                .string();
        },
        py::arg("spec_json"), py::arg("out_dir"));

    m.def(
        "colormap_depth",
        [](const FloatArray& depth) { return to_numpy(colormap_depth(tensor_from(depth))); },
        py::arg("depth"));
}
