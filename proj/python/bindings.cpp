#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "atq/format.hpp"
#include "atq/hessian.hpp"
#include "atq/quantizer.hpp"
#include "atq/tensor_file.hpp"
#include "atq/vq.hpp"

namespace py = pybind11;

namespace {

atq::QuantConfig make_config(atq::Index d, atq::Index n, atq::Index k, double damping,
                             bool codebook_int8, atq::Index lowrank_r, std::uint64_t seed,
                             int kmeans_max_iters, int flip_passes) {
    atq::QuantConfig cfg;
    cfg.d = d;
    cfg.n = n;
    cfg.k = k;
    cfg.damping_rel = damping;
    cfg.codebook_int8 = codebook_int8;
    cfg.lowrank_r = lowrank_r;
    cfg.seed = seed;
    cfg.kmeans_max_iters = kmeans_max_iters;
    cfg.flip_passes = flip_passes;
    return cfg;
}

atq::Precision precision_from_string(const std::string& name) {
    if (name == "fp64") {
        return atq::Precision::Fp64;
    }
    if (name == "fp32") {
        return atq::Precision::Fp32;
    }
    if (name == "fp16") {
        return atq::Precision::Fp16;
    }
    throw atq::ValidationError("unknown precision '" + name + "'");
}

py::dict bit_report_dict(const atq::BitReport& r) {
    py::dict d;
    d["b_c"] = r.b_c;
    d["b_i"] = r.b_i;
    d["b_lr"] = r.b_lr;
    d["b_total"] = r.b_total;
    d["file_overhead_bytes"] = r.file_overhead_bytes;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Hessian-guided vector quantization of dense weight matrices.";

    py::register_exception<atq::ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<atq::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<atq::IoError>(m, "IoError", PyExc_IOError);

    py::class_<atq::QuantConfig>(m, "QuantConfig")
        .def(py::init(&make_config), py::arg("d") = 2, py::arg("n") = 16, py::arg("k") = 64,
             py::arg("damping") = 0.01, py::arg("codebook_int8") = false,
             py::arg("lowrank_r") = 0, py::arg("seed") = 0,
             py::arg("kmeans_max_iters") = 100, py::arg("flip_passes") = 4)
        .def_readwrite("d", &atq::QuantConfig::d)
        .def_readwrite("n", &atq::QuantConfig::n)
        .def_readwrite("k", &atq::QuantConfig::k)
        .def_readwrite("damping", &atq::QuantConfig::damping_rel)
        .def_readwrite("codebook_int8", &atq::QuantConfig::codebook_int8)
        .def_readwrite("lowrank_r", &atq::QuantConfig::lowrank_r)
        .def_readwrite("seed", &atq::QuantConfig::seed);

    py::class_<atq::HessianState>(m, "HessianState")
        .def_property_readonly("dim", &atq::HessianState::dim)
        .def_property_readonly("hessian", &atq::HessianState::hessian)
        .def_property_readonly("inverse", &atq::HessianState::inverse)
        .def("eliminate",
             [](atq::HessianState& s, const std::vector<atq::Index>& indices) {
                 atq::GroupSelector q;
                 q.indices = indices;
                 s.eliminate(q);
             },
             py::arg("indices"))
        .def("metric", [](const atq::HessianState& s, const std::vector<atq::Index>& indices) {
            atq::GroupSelector q;
            q.indices = indices;
            return s.metric(q);
        });

    py::class_<atq::QuantizedLayer>(m, "QuantizedLayer")
        .def_readonly("rows", &atq::QuantizedLayer::rows)
        .def_readonly("cols", &atq::QuantizedLayer::cols)
        .def_property_readonly("index",
                               [](const atq::QuantizedLayer& l) { return l.index; })
        .def_property_readonly("config",
                               [](const atq::QuantizedLayer& l) { return l.config; })
        .def("dequantize", [](const atq::QuantizedLayer& l) { return atq::dequantize(l); })
        .def("serialize",
             [](const atq::QuantizedLayer& l) {
                 const auto bytes = atq::serialize(l);
                 return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
             })
        .def("save", [](const atq::QuantizedLayer& l, const std::string& path) {
            atq::save_layer(l, path);
        }, py::arg("path"));

    m.def("load_matrix", &atq::load_matrix, py::arg("path"));
    m.def(
        "store_matrix",
        [](const atq::Matrix& mat, const std::string& path, const std::string& precision) {
            atq::store_matrix(mat, path, precision_from_string(precision));
        },
        py::arg("matrix"), py::arg("path"), py::arg("precision") = "fp64");

    m.def(
        "accumulate_hessian",
        [](const atq::Matrix& samples) {
            return atq::accumulate_hessian(atq::CalibrationBatch{samples});
        },
        py::arg("samples"));
    m.def("finalize_hessian", &atq::finalize_hessian, py::arg("h_raw"),
          py::arg("damping") = 0.01);
    m.def(
        "build_hessian",
        [](const atq::Matrix& samples, double damping) {
            return atq::finalize_hessian(
                atq::accumulate_hessian(atq::CalibrationBatch{samples}), damping);
        },
        py::arg("samples"), py::arg("damping") = 0.01);

    m.def(
        "weighted_kmeans",
        [](const atq::Matrix& points, const atq::Matrix& metric, atq::Index n,
           std::uint64_t seed, int max_iters, int flip_passes) {
            auto km = atq::vq::weighted_kmeans(points, metric, n, seed, max_iters);
            if (flip_passes > 0) {
                km = atq::vq::flip_improve(points, metric, km.codebook, km.assignment,
                                           flip_passes);
            }
            return py::make_tuple(km.codebook.centroids, km.assignment);
        },
        py::arg("points"), py::arg("metric"), py::arg("n"), py::arg("seed") = 0,
        py::arg("max_iters") = 100, py::arg("flip_passes") = 0);
    m.def(
        "verify_lloyd",
        [](const atq::Matrix& points, const atq::Matrix& metric, const atq::Matrix& centroids,
           const atq::vq::Assignment& asg) {
            return atq::vq::verify_lloyd(points, metric, atq::vq::Codebook{centroids}, asg);
        },
        py::arg("points"), py::arg("metric"), py::arg("centroids"), py::arg("assignment"));

    m.def(
        "quantize_matrix",
        [](const atq::Matrix& w, const atq::HessianState& hess, const atq::QuantConfig& cfg,
           bool fast_order) {
            atq::QuantizeOptions opts;
            opts.fast_order = fast_order;
            return atq::quantize_matrix(w, hess, cfg, opts).layer;
        },
        py::arg("weights"), py::arg("hessian"), py::arg("config"),
        py::arg("fast_order") = false);
    m.def("quantize_rtn", &atq::quantize_rtn, py::arg("weights"), py::arg("config"));
    m.def("proxy_loss", &atq::proxy_loss, py::arg("weights"), py::arg("reconstruction"),
          py::arg("hessian"));
    m.def("dequantize", &atq::dequantize, py::arg("layer"));
    m.def("load_layer", &atq::load_layer, py::arg("path"));
    m.def("save_layer", &atq::save_layer, py::arg("layer"), py::arg("path"));
    m.def(
        "deserialize",
        [](const py::bytes& data) {
            const std::string_view view = data;
            return atq::deserialize(
                std::vector<std::uint8_t>(view.begin(), view.end()));
        },
        py::arg("data"));
    m.def(
        "bits_per_weight",
        [](const atq::QuantConfig& cfg, atq::Index rows, atq::Index cols) {
            return bit_report_dict(atq::bits_per_weight(cfg, rows, cols));
        },
        py::arg("config"), py::arg("rows") = 0, py::arg("cols") = 0);

    m.attr("__version__") = "0.1.0";
}
