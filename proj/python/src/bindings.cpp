#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "specforge/bench.hpp"
#include "specforge/blake3.hpp"
#include "specforge/corpus.hpp"
#include "specforge/router.hpp"
#include "specforge/tensor_store.hpp"
#include "specforge/trainers.hpp"
#include "specforge/weight_ops.hpp"

namespace py = pybind11;
using namespace specforge;

namespace {

py::array tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    if (t.dtype() == DType::F32) {
        py::array_t<float> out(shape);
        std::copy(t.f32().begin(), t.f32().end(), out.mutable_data());
        return out;
    }
    py::array_t<double> out(shape);
    std::copy(t.f64().begin(), t.f64().end(), out.mutable_data());
    return out;
}

Tensor array_to_tensor(const py::array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    if (py::isinstance<py::array_t<float>>(a)) {
        const auto c = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
        return Tensor::from_f32(shape, {c.data(), static_cast<std::size_t>(c.size())});
    }
    const auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
    if (!c) throw ConfigError("tensor values must be numeric");
    return Tensor::from_f64(shape, {c.data(), static_cast<std::size_t>(c.size())});
}

py::dict diagnostics_to_dict(const DiagnosticsReport& r) {
    py::dict d;
    d["global_cosine"] = r.global_cosine;
    d["global_zero_norm"] = r.global_zero_norm;
    d["norm_a"] = r.norm_a;
    d["norm_b"] = r.norm_b;
    d["per_tensor_cosine"] = r.per_tensor_cosine;
    return d;
}

} // namespace

PYBIND11_MODULE(_specforge, m) {
    m.doc() = "Bindings for the specforge C++ core.";

    auto error = py::register_exception<Error>(m, "Error");
    py::register_exception<FormatError>(m, "FormatError", error.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<IncompatibleError>(m, "IncompatibleError", error.ptr());

    py::class_<Checkpoint>(m, "Checkpoint")
        .def(py::init<>())
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); },
             py::arg("path"))
        .def("names",
             [](const Checkpoint& c) {
                 std::vector<std::string> out;
                 for (const auto& [name, t] : c.tensors) out.push_back(name);
                 return out;
             })
        .def("__len__", [](const Checkpoint& c) { return c.tensors.size(); })
        .def("__contains__", &Checkpoint::contains)
        .def("__getitem__", [](const Checkpoint& c, const std::string& name) { return tensor_to_array(c.at(name)); })
        .def("__setitem__",
             [](Checkpoint& c, const std::string& name, const py::array& a) {
                 if (!is_valid_tensor_name(name)) throw FormatError("invalid tensor name '" + name + "'");
                 c.tensors[name] = array_to_tensor(a);
             })
        .def("dtype", [](const Checkpoint& c, const std::string& name) { return std::string(dtype_name(c.at(name).dtype())); })
        .def_readwrite("metadata", &Checkpoint::metadata)
        .def_property_readonly("parameter_count", &Checkpoint::parameter_count)
        .def("__eq__", [](const Checkpoint& a, const Checkpoint& b) { return a == b; })
        .def("__repr__", [](const Checkpoint& c) {
            return "<Checkpoint tensors=" + std::to_string(c.tensors.size()) +
                   " parameters=" + std::to_string(c.parameter_count()) + ">";
        });

    m.def("extract_residual", [](const Checkpoint& inst, const Checkpoint& base) { return extract_residual(inst, base); },
          py::arg("inst"), py::arg("base"), "inst - base, tensor by tensor.");
    m.def("apply_residual", &apply_residual, py::arg("target"), py::arg("residual"), py::arg("scale") = 1.0,
          "target + scale * residual.");
    m.def(
        "subspace_diagnostics",
        [](const Checkpoint& a, const Checkpoint& b) { return diagnostics_to_dict(subspace_diagnostics(a, b)); },
        py::arg("delta_a"), py::arg("delta_b"));

    m.def(
        "dpo_loss",
        [](double policy_chosen, double ref_chosen, double policy_rejected, double ref_rejected, double beta) {
            const auto t = dpo_from_logprobs(policy_chosen, ref_chosen, policy_rejected, ref_rejected, beta);
            return py::make_tuple(t.loss, t.margin);
        },
        py::arg("policy_chosen"), py::arg("ref_chosen"), py::arg("policy_rejected"), py::arg("ref_rejected"),
        py::arg("beta"), "Returns (loss, margin) from sequence log-probabilities.");

    m.def("percentile_nearest_rank", &percentile_nearest_rank, py::arg("values"), py::arg("p"));

    m.def(
        "build_classification_prompt", [](const std::string& q) { return build_classification_prompt(q); },
        py::arg("query"));
    m.def(
        "parse_category",
        [](const std::string& text) -> std::optional<int> {
            const auto r = parse_category(text);
            if (const auto* c = std::get_if<TaskCategory>(&r)) return static_cast<int>(*c);
            return std::nullopt;
        },
        py::arg("response"), "Category number 1-3, or None when the reply is unparseable.");
    m.def(
        "route_query",
        [](const std::string& query) {
            KeywordStub stub;
            return py::module_::import("json").attr("loads")(route(query, stub).to_json().dump());
        },
        py::arg("query"), "Routes with the built-in keyword classifier and returns the plan as a dict.");

    m.def(
        "clean_text", [](const std::string& text) { return clean_stage2(clean_stage1(text)); }, py::arg("text"));
    m.def(
        "count_tokens", [](const std::string& text) { return count_tokens(text); }, py::arg("text"));
    m.def(
        "redact_pii",
        [](const std::string& text, std::uint64_t seed) {
            const auto r = redact_pii(text, seed);
            return py::make_tuple(r.text, r.replacements);
        },
        py::arg("text"), py::arg("seed"), "Returns (redacted text, replacements per entity type).");

    m.def(
        "blake3_hex", [](const py::bytes& data) { return blake3_hex(std::string_view(data)); }, py::arg("data"));
}
