#include "promptseg/cli.hpp"
#include "promptseg/error.hpp"
#include "promptseg/grpo.hpp"
#include "promptseg/mask.hpp"
#include "promptseg/protocol.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace promptseg;

namespace {

PromptSchema make_schema(const std::string& mode, int width, int height) {
    return PromptSchema{parse_prompt_mode(mode), Canvas{width, height}};
}

BinaryMask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw UsageError("mask must be a 2-D array");
    auto r = a.unchecked<2>();
    BinaryMask m(int(a.shape(1)), int(a.shape(0)));
    for (py::ssize_t y = 0; y < r.shape(0); ++y)
        for (py::ssize_t x = 0; x < r.shape(1); ++x)
            if (r(y, x)) m.set(int(x), int(y));
    return m;
}

// (ok, think, answer json) on success, (False, kind, detail) otherwise.
py::tuple parse(const std::string& text, const std::string& mode, int width, int height) {
    auto schema = make_schema(mode, width, height);
    auto r = parse_response(text, schema);
    if (!r.ok()) return py::make_tuple(false, std::string(to_string(r.error().kind)), r.error().detail);
    return py::make_tuple(true, r.think(), serialize_answer(r.prompts(), schema));
}

std::string serialize(const std::string& answer_json, const std::string& think, const std::string& mode, int width,
                      int height) {
    auto schema = make_schema(mode, width, height);
    // Reuse the parser to validate and build the prompt set.
    auto r = parse_response("<think></think><answer>" + answer_json + "</answer>", schema);
    if (!r.ok()) throw Error(std::string(to_string(r.error().kind)) + ": " + r.error().detail);
    return serialize_prompt_set(r.prompts(), think, schema);
}

py::tuple cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
        py::gil_scoped_release release;
        code = run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "promptseg core bindings";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    m.def("parse_response", &parse, py::arg("text"), py::arg("schema") = "bbox_pos2", py::arg("width") = 256,
          py::arg("height") = 256);
    m.def("serialize", &serialize, py::arg("answer_json"), py::arg("think"), py::arg("schema") = "bbox_pos2",
          py::arg("width") = 256, py::arg("height") = 256);
    m.def(
        "format_reward",
        [](const std::string& text, const std::string& mode, int width, int height) {
            return format_reward(parse_response(text, make_schema(mode, width, height)));
        },
        py::arg("text"), py::arg("schema") = "bbox_pos2", py::arg("width") = 256, py::arg("height") = 256);
    m.def(
        "iou", [](py::array_t<bool, py::array::c_style | py::array::forcecast> a,
                  py::array_t<bool, py::array::c_style | py::array::forcecast> b) { return iou(to_mask(a), to_mask(b)); },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "advantages", [](const std::vector<double>& rewards) { return compute_advantages(rewards).advantages; },
        py::arg("rewards"));
    m.def("run_cli", &cli, py::arg("args"), "Runs the command line in-process; returns (code, stdout, stderr).");
}
