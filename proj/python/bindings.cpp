#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "oodkit/cli.hpp"
#include "oodkit/data_io.hpp"
#include "oodkit/error.hpp"
#include "oodkit/fcgm.hpp"
#include "oodkit/losses.hpp"
#include "oodkit/metrics.hpp"
#include "oodkit/nn.hpp"
#include "oodkit/synthgen.hpp"

namespace py = pybind11;
using namespace oodkit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.values().begin(), t.values().end(), a.mutable_data());
    return a;
}

ScoreSample sample(std::vector<double> in, std::vector<double> out) { return {std::move(in), std::move(out)}; }

py::dict eval_dict(const EvalResult& r) {
    py::dict d;
    d["tnr95"] = r.tnr95;
    d["auroc"] = r.auroc;
    d["dacc"] = r.dacc;
    return d;
}

py::dict dataset_dict(const Dataset& ds) {
    py::dict d;
    d["name"] = ds.name;
    d["role"] = std::string(role_name(ds.role));
    d["images"] = to_array(ds.images);
    d["labels"] = ds.labels;
    d["num_classes"] = ds.num_classes;
    d["provenance"] = ds.provenance;
    return d;
}

}  // namespace

PYBIND11_MODULE(_oodkit, m) {
    m.doc() = "Out-of-distribution detection toolkit";

    py::register_exception<Error>(m, "OodkitError", PyExc_RuntimeError);

    m.def("softmax", [](const Array& z) { return to_array(softmax(to_tensor(z))); }, py::arg("logits"));
    m.def("msp_scores", [](const Array& z) { return msp_scores(to_tensor(z)); }, py::arg("logits"));
    m.def(
        "ce_loss",
        [](const Array& z, const std::vector<std::size_t>& labels) {
            const LossValue v = ce_loss(to_tensor(z), labels);
            return py::make_tuple(v.value, to_array(v.grad));
        },
        py::arg("logits"), py::arg("labels"));
    m.def(
        "oecc_loss",
        [](const Array& in, const std::vector<std::size_t>& labels, const Array& oe, double lambda1, double lambda2,
           double train_accuracy) {
            const OeccValue v = oecc_loss(to_tensor(in), labels, to_tensor(oe), {lambda1, lambda2, train_accuracy});
            py::dict d;
            d["value"] = v.value;
            d["ce"] = v.ce;
            d["confidence"] = v.confidence;
            d["uniformity"] = v.uniformity;
            d["in_grad"] = to_array(v.in_grad);
            d["oe_grad"] = to_array(v.oe_grad);
            return d;
        },
        py::arg("in_logits"), py::arg("labels"), py::arg("oe_logits"), py::arg("lambda1"), py::arg("lambda2"),
        py::arg("train_accuracy"));

    m.def(
        "tnr_at_tpr", [](std::vector<double> in, std::vector<double> out, double target) {
            return tnr_at_tpr(sample(std::move(in), std::move(out)), target);
        },
        py::arg("in_scores"), py::arg("out_scores"), py::arg("tpr_target") = 0.95);
    m.def(
        "auroc", [](std::vector<double> in, std::vector<double> out) { return auroc(sample(std::move(in), std::move(out))); },
        py::arg("in_scores"), py::arg("out_scores"));
    m.def(
        "detection_accuracy",
        [](std::vector<double> in, std::vector<double> out) {
            return detection_accuracy(sample(std::move(in), std::move(out)));
        },
        py::arg("in_scores"), py::arg("out_scores"));
    m.def(
        "evaluate",
        [](std::vector<double> in, std::vector<double> out) {
            return eval_dict(evaluate(sample(std::move(in), std::move(out))));
        },
        py::arg("in_scores"), py::arg("out_scores"));

    m.def("gram", [](const Array& f, std::size_t order) { return to_array(fcgm::gram(to_tensor(f), order)); },
          py::arg("feature_map"), py::arg("order"));

    m.def(
        "generate",
        [](const std::string& kind, std::uint64_t seed, std::size_t count, std::optional<Array> source,
           std::vector<std::size_t> image_shape, double speckle_sigma) {
            synth::GenSpec spec;
            spec.kind = synth::parse_kind(kind);
            spec.seed = seed;
            spec.count = count;
            spec.image_shape = std::move(image_shape);
            spec.speckle_sigma = speckle_sigma;
            if (!source) return to_array(synth::generate(spec, nullptr));
            const Tensor src = to_tensor(*source);
            return to_array(synth::generate(spec, &src));
        },
        py::arg("kind"), py::arg("seed"), py::arg("count"), py::arg("source") = py::none(),
        py::arg("image_shape") = std::vector<std::size_t>{3, 8, 8}, py::arg("speckle_sigma") = 0.4);

    m.def("load_dataset", [](const std::filesystem::path& dir) { return dataset_dict(load_dataset(dir)); },
          py::arg("path"));
    m.def(
        "save_dataset",
        [](const std::filesystem::path& dir, const std::string& name, const std::string& role, const Array& images,
           std::vector<std::size_t> labels, std::size_t num_classes) {
            Dataset ds;
            ds.name = name;
            ds.role = parse_role(role);
            ds.images = to_tensor(images);
            ds.labels = std::move(labels);
            ds.num_classes = num_classes;
            save_dataset(ds, dir);
        },
        py::arg("path"), py::arg("name"), py::arg("role"), py::arg("images"),
        py::arg("labels") = std::vector<std::size_t>{}, py::arg("num_classes") = 0);

    py::class_<Network>(m, "Network")
        .def_static("load", [](const std::filesystem::path& dir) { return load_network(dir); }, py::arg("path"))
        .def("logits", [](const Network& n, const Array& x) { return to_array(logits_of(n, to_tensor(x))); },
             py::arg("images"))
        .def("predict", [](const Network& n, const Array& x) { return predict(n, to_tensor(x)); }, py::arg("images"))
        .def_property_readonly("num_classes", &Network::num_classes);

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "oodkit");
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
