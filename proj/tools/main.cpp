// mambaq command-line driver: quantize / eval / check-equivalence / simulate,
// plus make-toy for generating synthetic fixtures. Every run emits a manifest
// JSON with resolved options and FNV-1a hashes of the inputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mambaq/container.hpp"
#include "mambaq/error.hpp"
#include "mambaq/model.hpp"
#include "mambaq/qengine.hpp"
#include "mambaq/rotation.hpp"
#include "mambaq/sim.hpp"
#include "mambaq/synth.hpp"

using json = nlohmann::json;
using namespace mambaq;

namespace {

constexpr const char* kVersion = "0.1.0";

struct RunManifest {
    json j;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    explicit RunManifest(std::string cmd) {
        j["tool"] = "mambaq";
        j["version"] = kVersion;
        j["command"] = std::move(cmd);
        j["options"] = json::object();
        j["inputs"] = json::array();
        j["outputs"] = json::array();
    }
    void opt(const std::string& k, const json& v) { j["options"][k] = v; }
    void input(const std::string& name, const std::string& path) {
        j["inputs"].push_back({{"name", name}, {"path", path}, {"fnv1a", fnv1a_file(path)}});
    }
    void output(const std::string& path) { j["outputs"].push_back(path); }
    json finish() {
        j["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return j;
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
    if (!f) throw IoError("short write to " + path);
}

void maybe_write_manifest(const std::string& path, const json& m) {
    if (!path.empty()) write_text(path, m.dump(2) + "\n");
}

bool parse_tile(const std::string& s, int64_t& n_p, int64_t& p_p) {
    const size_t x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size()) return false;
    try {
        size_t u1 = 0, u2 = 0;
        const int64_t a = std::stoll(s.substr(0, x), &u1);
        const int64_t b = std::stoll(s.substr(x + 1), &u2);
        if (u1 != x || u2 != s.size() - x - 1 || a <= 0 || b <= 0) return false;
        n_p = a;
        p_p = b;
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// --- make-toy ---------------------------------------------------------------

int cmd_make_toy(const std::string& out, uint64_t seed, const std::string& style, int64_t corpus_len,
                 const std::string& manifest_path) {
    RunManifest m("make-toy");
    m.opt("out", out);
    m.opt("seed", seed);
    m.opt("style", style);
    m.opt("corpus_len", corpus_len);

    std::filesystem::create_directories(out);
    MambaConfig cfg;
    ModelWeights w;
    std::vector<int64_t> corpus;
    json extra = json::object();
    if (style == "bigram") {
        BigramFixture f = synth_bigram(seed);
        cfg = f.cfg;
        w = f.weights;
        if (corpus_len > 0) {
            corpus = sample_bigram_corpus(f, seed + 1, corpus_len);
            extra["analytic_perplexity"] = bigram_perplexity(f.logp, corpus);
        }
    } else {
        cfg = toy_config();
        w = synth_weights(cfg, seed, style == "outlier" ? SynthStyle::outlier_planted : SynthStyle::random);
        if (corpus_len > 0) corpus = synth_corpus(seed + 1, corpus_len, cfg.vocab_size);
    }
    save_model_dir(out, cfg, w);
    m.output(out + "/config.json");
    m.output(out + "/weights.mqw");
    if (!corpus.empty()) {
        std::ostringstream ss;
        for (int64_t t : corpus) ss << t << "\n";
        write_text(out + "/corpus.txt", ss.str());
        m.output(out + "/corpus.txt");
    }

    json res = {{"out", out},
                {"d_model", cfg.d_model},
                {"n_layers", cfg.n_layers},
                {"vocab_size", cfg.vocab_size},
                {"corpus_tokens", static_cast<int64_t>(corpus.size())}};
    for (auto& [k, v] : extra.items()) res[k] = v;
    res["manifest"] = m.finish();
    maybe_write_manifest(manifest_path, res["manifest"]);
    std::cout << res.dump(2) << "\n";
    return 0;
}

// --- quantize ----------------------------------------------------------------

int cmd_quantize(const std::string& config_path, const std::string& weights_path, const std::string& scheme,
                 bool rotate, bool quantize_ssm, bool fuse_norm, int64_t group_size, const std::string& out,
                 const std::string& manifest_path) {
    RunManifest m("quantize");
    m.opt("config", config_path);
    m.opt("weights", weights_path);
    m.opt("scheme", scheme);
    m.opt("rotate", rotate);
    m.opt("quantize_ssm", quantize_ssm);
    m.opt("fuse_norm", fuse_norm);
    m.opt("group_size", group_size);
    m.opt("out", out);
    m.input("config", config_path);
    m.input("weights", weights_path);

    MambaConfig cfg = MambaConfig::load(config_path);
    ModelWeights w = load_model_weights(weights_path, cfg);

    QuantizeOptions qo = scheme_options(scheme);
    qo.group_size = group_size;
    qo.quantize_ssm = quantize_ssm;
    qo.rotate = rotate;
    qo.rotation.fuse_second_norm_scale = fuse_norm;
    QuantizedModel qm = quantize_model(w, cfg, qo);
    qm.source_hash = fnv1a_file(weights_path);

    std::filesystem::create_directories(out);
    save_quantized_dir(out, qm);
    for (const char* f : {"config.json", "quant.json", "weights.mqw"}) m.output(out + "/" + std::string(f));

    json mj = m.finish();
    write_text(out + "/manifest.json", mj.dump(2) + "\n");
    maybe_write_manifest(manifest_path, mj);
    json res = {{"out", out}, {"scheme", scheme}, {"rotated", rotate}, {"quantize_ssm", quantize_ssm}, {"manifest", mj}};
    std::cout << res.dump(2) << "\n";
    return 0;
}

// --- eval ---------------------------------------------------------------------

int cmd_eval(const std::string& model_dir, const std::string& corpus_path, bool force_fp, bool force_quant,
             const std::string& reference_dir, const std::string& manifest_path) {
    RunManifest m("eval");
    m.opt("model", model_dir);
    m.opt("corpus", corpus_path);
    m.opt("fp", force_fp);
    m.opt("quantized", force_quant);
    m.opt("reference", reference_dir);
    m.input("corpus", corpus_path);

    const bool qdir = is_quantized_model_dir(model_dir);
    const bool quant = force_quant || (!force_fp && qdir);
    if (quant && !qdir) throw ConfigError(model_dir + " has no quant.json; cannot eval --quantized");
    if (!quant && qdir) throw ConfigError(model_dir + " is a quantized model; pass --quantized or drop --fp");

    json res;
    if (quant) {
        QuantizedModel qm = load_quantized_model(model_dir);
        m.input("weights", model_dir + "/weights.mqw");
        std::vector<int64_t> corpus = load_corpus(corpus_path, qm.cfg.vocab_size);
        res["mode"] = "quantized";
        res["tokens"] = static_cast<int64_t>(corpus.size());
        if (!reference_dir.empty()) {
            MambaConfig rcfg = MambaConfig::load(reference_dir + "/config.json");
            ModelWeights rw = load_model_weights(reference_dir + "/weights.mqw", rcfg);
            m.input("reference_weights", reference_dir + "/weights.mqw");
            PairedEval pe = paired_eval(qm, rw, rcfg, corpus);
            res["perplexity"] = pe.ppl_q;
            res["fp_perplexity"] = pe.ppl_fp;
            res["agreement"] = pe.agreement;
        } else {
            res["perplexity"] = qperplexity(qm, corpus);
        }
    } else {
        MambaConfig cfg = MambaConfig::load(model_dir + "/config.json");
        ModelWeights w = load_model_weights(model_dir + "/weights.mqw", cfg);
        m.input("weights", model_dir + "/weights.mqw");
        std::vector<int64_t> corpus = load_corpus(corpus_path, cfg.vocab_size);
        res["mode"] = "fp";
        res["tokens"] = static_cast<int64_t>(corpus.size());
        res["perplexity"] = perplexity(w, cfg, corpus);
    }
    res["manifest"] = m.finish();
    maybe_write_manifest(manifest_path, res["manifest"]);
    std::cout << res.dump(2) << "\n";
    return 0;
}

// --- check-equivalence ----------------------------------------------------------

int cmd_check(const std::string& config_path, const std::string& weights_path, double tolerance, int64_t tokens,
              uint64_t seed, bool sabotage, bool fuse_norm, const std::string& manifest_path) {
    RunManifest m("check-equivalence");
    m.opt("config", config_path);
    m.opt("weights", weights_path);
    m.opt("tolerance", tolerance);
    m.opt("tokens", tokens);
    m.opt("seed", seed);
    m.opt("sabotage", sabotage);
    m.opt("fuse_norm", fuse_norm);
    m.input("config", config_path);
    m.input("weights", weights_path);

    MambaConfig cfg = MambaConfig::load(config_path);
    ModelWeights w = load_model_weights(weights_path, cfg);
    RotationOptions ro;
    ro.fuse_second_norm_scale = fuse_norm;
    RotatedModel rot = build_rotated_model(w, cfg, ro);
    // negative control: drop the online rotation while the folded H stays in
    // W_out; invariance must then fail
    if (sabotage) rot.recipe.sites.pre_outproj = false;
    InvarianceReport rep = verify_invariance(w, cfg, rot, tokens, seed);
    const bool pass = rep.max_logit_diff <= tolerance && rep.greedy_match;

    // the inequality that forces the online site, shown on this model's inner
    // width: elementwise decay vs a single shared scalar
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const int64_t n = rot.inner_plan.n_total;
    Tensor a({4, n}), h({4, n}), bx({4, n});
    for (auto& v : h.data) v = uniform01(rng) * 2.0 - 1.0;
    for (auto& v : bx.data) v = uniform01(rng) * 2.0 - 1.0;
    for (auto& v : a.data) v = 0.05 + 0.9 * uniform01(rng);
    SsmRotationCheck elem = ssm_rotation_counterexample(a, h, bx, rot.inner_plan);
    Tensor a_const = Tensor::full({4, n}, 0.73);
    SsmRotationCheck scl = ssm_rotation_counterexample(a_const, h, bx, rot.inner_plan);

    std::cerr << "invariance over " << rep.tokens << " tokens: max |dlogit| = " << std::scientific
              << std::setprecision(3) << rep.max_logit_diff << " (tol " << tolerance << "), greedy "
              << (rep.greedy_match ? "match" : "MISMATCH") << "\n";
    std::cerr << "state-rotation commutation:\n";
    std::cerr << "  case            max_diff    commutes\n";
    std::cerr << "  elementwise a   " << std::scientific << std::setprecision(3) << elem.max_diff << "   "
              << (elem.equal ? "yes" : "no") << "\n";
    std::cerr << "  scalar a        " << std::scientific << std::setprecision(3) << scl.max_diff << "   "
              << (scl.equal ? "yes" : "no") << "\n";

    json res = {{"max_logit_diff", rep.max_logit_diff},
                {"greedy_match", rep.greedy_match},
                {"tokens", rep.tokens},
                {"tolerance", tolerance},
                {"pass", pass},
                {"counterexample",
                 {{"elementwise_max_diff", elem.max_diff},
                  {"elementwise_commutes", elem.equal},
                  {"scalar_max_diff", scl.max_diff},
                  {"scalar_commutes", scl.equal}}}};
    res["manifest"] = m.finish();
    maybe_write_manifest(manifest_path, res["manifest"]);
    std::cout << res.dump(2) << "\n";
    return pass ? 0 : 1;
}

// --- simulate --------------------------------------------------------------------

json report_to_json(const SimReport& rep, bool with_timeline) { return json::parse(rep.to_json(with_timeline)); }

void print_schedule_table(const std::vector<SimReport>& reps) {
    std::cout << std::left << std::setw(12) << "schedule" << std::right << std::setw(14) << "cycles/token"
              << std::setw(10) << "tok/s" << std::setw(10) << "mmu" << std::setw(10) << "ssmu" << std::setw(7)
              << "uram" << std::setw(7) << "bram" << std::setw(10) << "feasible" << "\n";
    for (const SimReport& r : reps) {
        std::cout << std::left << std::setw(12) << r.schedule << std::right << std::setw(14) << std::fixed
                  << std::setprecision(0) << r.cycles_per_token << std::setw(10) << std::setprecision(3)
                  << r.tokens_per_s << std::setw(10) << r.mmu_utilization << std::setw(10) << r.ssmu_utilization
                  << std::setw(7) << r.uram_used << std::setw(7) << r.bram_used << std::setw(10)
                  << (r.feasible ? "yes" : "NO") << "\n";
    }
}

int cmd_simulate(const std::string& hw_path, const std::string& cfg_path, const std::string& bits,
                 int bits_ssm, const std::string& schedule, const std::string& tile_str, int64_t group_size,
                 const std::string& report_path, bool no_timeline, const std::string& manifest_path) {
    RunManifest m("simulate");
    m.opt("hw", hw_path);
    m.opt("model_config", cfg_path);
    m.opt("bits", bits);
    m.opt("bits_ssm", bits_ssm);
    m.opt("schedule", schedule);
    m.opt("tile", tile_str);
    m.opt("group_size", group_size);
    m.opt("report", report_path);
    m.input("hw", hw_path);
    m.input("model_config", cfg_path);

    HwConfig hw = HwConfig::load(hw_path);
    Workload wl;
    wl.cfg = MambaConfig::load(cfg_path);
    wl.bits_w = wl.bits_a = (bits == "w4a4") ? 4 : (bits == "w8a8") ? 8 : 16;
    wl.bits_ssm = bits_ssm;
    wl.weight_group = group_size;
    if (!parse_tile(tile_str, wl.tile.n_p, wl.tile.p_p)) {
        std::cerr << "error: --tile expects NxP (e.g. 4x64), got '" << tile_str << "'\n";
        return 2;
    }

    std::vector<SimReport> reps;
    if (schedule == "all") {
        for (Schedule s : {Schedule::sequential, Schedule::reordered, Schedule::fine_tiled}) {
            wl.schedule = s;
            reps.push_back(simulate(wl, hw));
        }
        print_schedule_table(reps);
    } else {
        wl.schedule = schedule_from_name(schedule);
        reps.push_back(simulate(wl, hw));
    }

    bool all_feasible = true;
    for (const SimReport& r : reps) all_feasible = all_feasible && r.feasible;
    json mj = m.finish();

    if (schedule == "all") {
        json out = json::object();
        out["schedules"] = json::array();
        for (const SimReport& r : reps) out["schedules"].push_back(report_to_json(r, false));
        out["manifest"] = mj;
        if (!report_path.empty()) {
            write_text(report_path, out.dump(2) + "\n");
            m.output(report_path);
        } else if (manifest_path.empty()) {
            std::cout << mj.dump(2) << "\n";
        }
    } else {
        json out = report_to_json(reps[0], !no_timeline);
        out["manifest"] = mj;
        if (!report_path.empty()) {
            write_text(report_path, out.dump(2) + "\n");
            std::cout << reps[0].schedule << ": " << std::fixed << std::setprecision(0)
                      << reps[0].cycles_per_token << " cycles/token, " << std::setprecision(3)
                      << reps[0].tokens_per_s << " tok/s, " << (reps[0].feasible ? "feasible" : "INFEASIBLE")
                      << " -> " << report_path << "\n";
        } else {
            std::cout << out.dump(2) << "\n";
        }
    }
    maybe_write_manifest(manifest_path, mj);
    if (!all_feasible) {
        for (const SimReport& r : reps)
            for (const std::string& why : r.infeasible_reasons) std::cerr << r.schedule << ": " << why << "\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mambaq: quantized SSM inference and accelerator simulation"};
    app.require_subcommand(1);
    std::string manifest_path;
    app.add_option("--manifest", manifest_path, "write the run manifest JSON to this path")->capture_default_str();

    // make-toy
    auto* mk = app.add_subcommand("make-toy", "generate a synthetic model directory (and optional corpus)");
    std::string mk_out, mk_style = "random";
    uint64_t mk_seed = 1;
    int64_t mk_corpus = 0;
    mk->add_option("--out", mk_out, "output model directory")->required();
    mk->add_option("--seed", mk_seed, "rng seed")->capture_default_str();
    mk->add_option("--style", mk_style, "weight style")
        ->check(CLI::IsMember({"random", "outlier", "bigram"}))
        ->capture_default_str();
    mk->add_option("--corpus-len", mk_corpus, "also write corpus.txt with this many tokens")->capture_default_str();

    // quantize
    auto* qz = app.add_subcommand("quantize", "quantize an fp model directory into a quantized model directory");
    std::string qz_config, qz_weights, qz_scheme, qz_out;
    bool qz_rotate = false, qz_qssm = false, qz_fuse = false;
    int64_t qz_group = 128;
    qz->add_option("--config", qz_config, "model config JSON")->required();
    qz->add_option("--weights", qz_weights, "fp weight container (.mqw)")->required();
    qz->add_option("--scheme", qz_scheme, "quantization scheme")
        ->check(CLI::IsMember({"w8a8", "w4a4"}))
        ->required();
    qz->add_flag("--rotate", qz_rotate, "fold Hadamard rotations into the weights before quantizing");
    qz->add_flag("--quantize-ssm", qz_qssm, "power-of-two SSM quantization (shift-only scan)");
    qz->add_flag("--fuse-norm", qz_fuse, "fold the gated norm scale into W_out when rotating");
    qz->add_option("--group-size", qz_group, "weight group size for w4a4")->capture_default_str();
    qz->add_option("--out", qz_out, "output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "teacher-forced perplexity over a token corpus");
    std::string ev_model, ev_corpus, ev_ref;
    bool ev_fp = false, ev_quant = false;
    ev->add_option("--model", ev_model, "model directory (fp or quantized)")->required();
    ev->add_option("--corpus", ev_corpus, "token corpus, one integer per line")->required();
    ev->add_flag("--fp", ev_fp, "force fp evaluation");
    ev->add_flag("--quantized", ev_quant, "force quantized evaluation");
    ev->add_option("--reference", ev_ref, "fp model directory for paired eval (adds agreement %)");

    // check-equivalence
    auto* ck = app.add_subcommand("check-equivalence", "verify rotated-model logit invariance on an fp model");
    std::string ck_config, ck_weights;
    double ck_tol = 1e-6;
    int64_t ck_tokens = 256;
    uint64_t ck_seed = 7;
    bool ck_sab = false, ck_fuse = false;
    ck->add_option("--config", ck_config, "model config JSON")->required();
    ck->add_option("--weights", ck_weights, "fp weight container (.mqw)")->required();
    ck->add_option("--tolerance", ck_tol, "max allowed |logit diff|")->capture_default_str();
    ck->add_option("--tokens", ck_tokens, "decode steps to compare")->capture_default_str();
    ck->add_option("--seed", ck_seed, "token stream seed")->capture_default_str();
    ck->add_flag("--sabotage", ck_sab, "negative control: skip the online rotation (must fail)");
    ck->add_flag("--fuse-norm", ck_fuse, "fold the gated norm scale into W_out");

    // simulate
    auto* si = app.add_subcommand("simulate", "cycle-approximate accelerator model for one decode token");
    std::string si_hw, si_cfg, si_bits = "w4a4", si_sched = "fine_tiled", si_tile = "4x64", si_report;
    int si_bits_ssm = 8;
    int64_t si_group = 128;
    bool si_no_tl = false;
    si->add_option("--hw", si_hw, "hardware config JSON")->required();
    si->add_option("--model-config", si_cfg, "model config JSON")->required();
    si->add_option("--bits", si_bits, "weight/activation precision")
        ->check(CLI::IsMember({"w4a4", "w8a8", "w16a16"}))
        ->capture_default_str();
    si->add_option("--bits-ssm", si_bits_ssm, "SSM state precision")
        ->check(CLI::IsMember({8, 16}))
        ->capture_default_str();
    si->add_option("--schedule", si_sched, "pipeline schedule")
        ->check(CLI::IsMember({"sequential", "reordered", "fine_tiled", "all"}))
        ->capture_default_str();
    si->add_option("--tile", si_tile, "SSMU tile as NxP")->capture_default_str();
    si->add_option("--group-size", si_group, "streamed weight group size")->capture_default_str();
    si->add_option("--report", si_report, "write the report JSON to this path");
    si->add_flag("--no-timeline", si_no_tl, "omit the stage timeline from the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*mk) return cmd_make_toy(mk_out, mk_seed, mk_style, mk_corpus, manifest_path);
        if (*qz)
            return cmd_quantize(qz_config, qz_weights, qz_scheme, qz_rotate, qz_qssm, qz_fuse, qz_group, qz_out,
                                manifest_path);
        if (*ev) return cmd_eval(ev_model, ev_corpus, ev_fp, ev_quant, ev_ref, manifest_path);
        if (*ck)
            return cmd_check(ck_config, ck_weights, ck_tol, ck_tokens, ck_seed, ck_sab, ck_fuse, manifest_path);
        if (*si)
            return cmd_simulate(si_hw, si_cfg, si_bits, si_bits_ssm, si_sched, si_tile, si_group, si_report,
                                si_no_tl, manifest_path);
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
