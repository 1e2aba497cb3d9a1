// Thin python surface over the core: transforms, quantizers, model eval, and
// the accelerator model. Tensors cross the boundary as (flat list, rows, cols)
// and structured results as JSON strings the package wrapper decodes.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "mambaq/container.hpp"
#include "mambaq/hadamard.hpp"
#include "mambaq/model.hpp"
#include "mambaq/qengine.hpp"
#include "mambaq/quant.hpp"
#include "mambaq/rotation.hpp"
#include "mambaq/sim.hpp"
#include "mambaq/synth.hpp"

namespace py = pybind11;
using namespace mambaq;

namespace {

Tensor to_tensor(const std::vector<double>& flat, int64_t rows, int64_t cols) {
    if (rows * cols != static_cast<int64_t>(flat.size()))
        throw DimError("flat size " + std::to_string(flat.size()) + " != rows*cols");
    return Tensor({rows, cols}, flat);
}

QuantScheme make_scheme(int bits, const std::string& granularity, int64_t group_size, bool pot,
                        const std::string& group_axis) {
    QuantScheme s;
    s.bits = bits;
    if (granularity == "per_tensor") s.granularity = Granularity::per_tensor;
    else if (granularity == "per_token") s.granularity = Granularity::per_token;
    else if (granularity == "per_channel") s.granularity = Granularity::per_channel;
    else if (granularity == "per_group") s.granularity = Granularity::per_group;
    else throw ConfigError("unknown granularity: " + granularity);
    s.group_size = group_size;
    s.scale_kind = pot ? ScaleKind::pot : ScaleKind::fp;
    s.group_axis = group_axis == "rows" ? GroupAxis::rows : GroupAxis::cols;
    s.validate();
    return s;
}

}  // namespace

PYBIND11_MODULE(_mambaq, m) {
    m.doc() = "quantized SSM inference core";

    // transforms
    m.def("fwht", [](std::vector<double> v) {
        fwht(v);
        return v;
    }, py::arg("v"), "in-place fast Walsh-Hadamard transform (unnormalized), returns the result");
    m.def("rotate", [](const std::vector<double>& flat, int64_t rows, int64_t cols, bool transpose) {
        HadamardPlan plan = make_plan(cols);
        return apply_rotation(to_tensor(flat, rows, cols), plan, transpose).data;
    }, py::arg("flat"), py::arg("rows"), py::arg("cols"), py::arg("transpose") = false,
       "multiply each row by the orthonormal Hadamard rotation for this width");
    m.def("kurtosis", [](const std::vector<double>& flat) {
        return kurtosis(Tensor({static_cast<int64_t>(flat.size())}, flat));
    });

    // quantizers
    m.def("quant_dequant",
          [](const std::vector<double>& flat, int64_t rows, int64_t cols, int bits,
             const std::string& granularity, int64_t group_size, bool pot, const std::string& group_axis) {
              Tensor x = to_tensor(flat, rows, cols);
              QuantScheme s = make_scheme(bits, granularity, group_size, pot, group_axis);
              return dequantize(quantize_rtn(x, s)).data;
          },
          py::arg("flat"), py::arg("rows"), py::arg("cols"), py::arg("bits") = 8,
          py::arg("granularity") = "per_token", py::arg("group_size") = 128, py::arg("pot") = false,
          py::arg("group_axis") = "cols");
    m.def("quant_mse",
          [](const std::vector<double>& flat, int64_t rows, int64_t cols, int bits,
             const std::string& granularity, int64_t group_size, bool pot, const std::string& group_axis) {
              Tensor x = to_tensor(flat, rows, cols);
              QuantScheme s = make_scheme(bits, granularity, group_size, pot, group_axis);
              return quant_error(x, quantize_rtn(x, s)).mse;
          },
          py::arg("flat"), py::arg("rows"), py::arg("cols"), py::arg("bits") = 4,
          py::arg("granularity") = "per_token", py::arg("group_size") = 128, py::arg("pot") = false,
          py::arg("group_axis") = "cols");
    m.def("requantize_shift", &requantize_shift, py::arg("acc"), py::arg("shift"), py::arg("out_bits"),
          "shift-and-round an int32 accumulator to a narrower width");

    // synthetic models and evaluation
    m.def("make_toy", [](const std::string& out, uint64_t seed, const std::string& style) {
        MambaConfig cfg = toy_config();
        ModelWeights w = synth_weights(cfg, seed, style == "outlier" ? SynthStyle::outlier_planted
                                                                      : SynthStyle::random);
        save_model_dir(out, cfg, w);
    }, py::arg("out"), py::arg("seed") = 1, py::arg("style") = "random");
    m.def("synth_corpus", [](uint64_t seed, int64_t length, int64_t vocab) {
        return synth_corpus(seed, length, vocab);
    }, py::arg("seed"), py::arg("length"), py::arg("vocab"));
    m.def("perplexity", [](const std::string& model_dir, const std::vector<int64_t>& tokens) {
        MambaConfig cfg = MambaConfig::load(model_dir + "/config.json");
        ModelWeights w = load_model_weights(model_dir + "/weights.mqw", cfg);
        return perplexity(w, cfg, tokens);
    }, py::arg("model_dir"), py::arg("tokens"));
    m.def("quantize_dir",
          [](const std::string& model_dir, const std::string& out, const std::string& scheme, bool rotate,
             bool quantize_ssm, int64_t group_size) {
              MambaConfig cfg = MambaConfig::load(model_dir + "/config.json");
              ModelWeights w = load_model_weights(model_dir + "/weights.mqw", cfg);
              QuantizeOptions qo = scheme_options(scheme);
              qo.rotate = rotate;
              qo.quantize_ssm = quantize_ssm;
              qo.group_size = group_size;
              QuantizedModel qm = quantize_model(w, cfg, qo);
              qm.source_hash = fnv1a_file(model_dir + "/weights.mqw");
              save_quantized_dir(out, qm);
          },
          py::arg("model_dir"), py::arg("out"), py::arg("scheme") = "w8a8", py::arg("rotate") = false,
          py::arg("quantize_ssm") = false, py::arg("group_size") = 128);
    m.def("qperplexity", [](const std::string& qdir, const std::vector<int64_t>& tokens) {
        QuantizedModel qm = load_quantized_model(qdir);
        SsmOpCounters ctr;
        const double ppl = qperplexity(qm, tokens, &ctr);
        nlohmann::json j = {{"perplexity", ppl},
                            {"em_int_mults", ctr.em_int_mults},
                            {"rescale_mults", ctr.rescale_mults},
                            {"fp_mults", ctr.fp_mults},
                            {"shifts", ctr.shifts},
                            {"adds", ctr.adds}};
        return j.dump();
    }, py::arg("qdir"), py::arg("tokens"), "returns a JSON string with perplexity and scan op counters");
    m.def("check_invariance", [](const std::string& model_dir, int64_t tokens, uint64_t seed, bool sabotage) {
        MambaConfig cfg = MambaConfig::load(model_dir + "/config.json");
        ModelWeights w = load_model_weights(model_dir + "/weights.mqw", cfg);
        RotatedModel rot = build_rotated_model(w, cfg);
        if (sabotage) rot.recipe.sites.pre_outproj = false;
        InvarianceReport rep = verify_invariance(w, cfg, rot, tokens, seed);
        nlohmann::json j = {{"max_logit_diff", rep.max_logit_diff},
                            {"greedy_match", rep.greedy_match},
                            {"tokens", rep.tokens}};
        return j.dump();
    }, py::arg("model_dir"), py::arg("tokens") = 64, py::arg("seed") = 7, py::arg("sabotage") = false);

    // accelerator model
    m.def("simulate",
          [](const std::string& hw_path, const std::string& cfg_path, int bits, int bits_ssm,
             const std::string& schedule, int64_t n_p, int64_t p_p, int64_t group_size) {
              HwConfig hw = HwConfig::load(hw_path);
              Workload wl;
              wl.cfg = MambaConfig::load(cfg_path);
              wl.bits_w = wl.bits_a = bits;
              wl.bits_ssm = bits_ssm;
              wl.weight_group = group_size;
              wl.schedule = schedule_from_name(schedule);
              wl.tile = {n_p, p_p};
              return simulate(wl, hw).to_json(false);
          },
          py::arg("hw_path"), py::arg("model_config_path"), py::arg("bits") = 4, py::arg("bits_ssm") = 8,
          py::arg("schedule") = "fine_tiled", py::arg("n_p") = 4, py::arg("p_p") = 64,
          py::arg("group_size") = 128, "returns the simulator report as a JSON string");

    m.def("fnv1a_file", &fnv1a_file, py::arg("path"));

    py::register_exception<Error>(m, "MambaqError");
}
