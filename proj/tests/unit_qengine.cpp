#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mambaq/qengine.hpp"
#include "mambaq/synth.hpp"
#include "oracles.hpp"

using namespace mambaq;

namespace {
double u01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }
std::string tmpdir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("mambaq_test_") + tag);
    std::filesystem::create_directories(p);
    return p.string();
}
}  // namespace

TEST_CASE("scheme_options maps the two presets") {
    QuantizeOptions w8 = scheme_options("w8a8");
    CHECK(w8.weight_bits == 8);
    CHECK(w8.act_bits == 8);
    QuantizeOptions w4 = scheme_options("w4a4");
    CHECK(w4.weight_bits == 4);
    CHECK(w4.act_bits == 4);
    CHECK_THROWS_AS(scheme_options("w2a2"), ConfigError);
}

TEST_CASE("qlinear stays close to the fp matmul") {
    std::mt19937_64 g(31);
    const int64_t K = 128, N = 32;
    Tensor W({K, N});
    for (auto& v : W.data) v = (u01(g) * 2 - 1) * 0.1;
    Tensor x({1, K});
    for (auto& v : x.data) v = (u01(g) * 2 - 1) * 2.0;

    QuantScheme ws;  // per_channel 8-bit weights
    ws.bits = 8;
    ws.granularity = Granularity::per_channel;
    QuantizedTensor Wq = quantize_rtn(W, ws);
    QuantScheme as;  // per_token 8-bit activations
    as.bits = 8;
    as.granularity = Granularity::per_token;

    Tensor got = qlinear_dyn(x, Wq, as);
    Tensor want = oracle::matmul(x, W);
    // int8 x int8 with fp scales: relative error well under a percent here
    for (int64_t j = 0; j < N; ++j)
        CHECK(std::abs(got.data[size_t(j)] - want.at(0, j)) <= 0.02 * std::max(1.0, std::abs(want.at(0, j))));
}

TEST_CASE("qlinear group nesting is enforced") {
    QuantScheme ws;
    ws.bits = 4;
    ws.granularity = Granularity::per_group;
    ws.group_size = 32;
    ws.group_axis = GroupAxis::rows;  // along K
    Tensor W = Tensor::full({64, 8}, 0.5);
    QuantizedTensor Wq = quantize_rtn(W, ws);

    QuantScheme as;
    as.bits = 4;
    as.granularity = Granularity::per_group;
    as.group_size = 48;  // 48 does not nest with 32
    as.group_axis = GroupAxis::cols;
    Tensor x = Tensor::full({1, 64}, 1.0);
    QuantizedTensor xq = quantize_rtn(x, as);
    CHECK_THROWS_AS(qlinear(xq, Wq), DimError);

    as.group_size = 32;  // equal blocks nest
    QuantizedTensor xq2 = quantize_rtn(x, as);
    Tensor y = qlinear(xq2, Wq);
    CHECK(y.numel() == 8);
    CHECK(y.data[0] == doctest::Approx(32.0).epsilon(0.02));
}

TEST_CASE("pot_quantize snaps per group and keeps zeros") {
    std::vector<double> v{0.5, -0.25, 0.0, 0.0, 3.0, -2.0};
    std::vector<int64_t> grp{0, 0, 1, 1, 2, 2};
    PotVec pv = pot_quantize(v, grp, 3);
    REQUIRE(pv.codes.size() == 6);
    REQUIRE(pv.exps.size() == 3);
    // zero group: codes zero, exponent clamped but harmless
    CHECK(pv.codes[2] == 0);
    CHECK(pv.codes[3] == 0);
    for (size_t i = 0; i < v.size(); ++i) {
        const double scale = std::ldexp(1.0, pv.exps[grp[i]]);
        // snapping can shrink the scale below max/127, clamping the group max;
        // codes must still match the clamp-aware reference and land within one
        // step of the input
        const int64_t want = std::min<int64_t>(127, std::max<int64_t>(-128, round_half_away(v[i] / scale)));
        CHECK(pv.codes[i] == want);
        const double back = static_cast<double>(pv.codes[i]) * scale;
        CHECK(std::abs(back - v[i]) <= scale + 1e-12);
    }
}

TEST_CASE("w8a8 quantized decode tracks the fp model") {
    MambaConfig cfg = toy_config();
    ModelWeights w = synth_weights(cfg, 3, SynthStyle::random);
    std::vector<int64_t> corpus = synth_corpus(21, 256, cfg.vocab_size);
    const double ppl_fp = perplexity(w, cfg, corpus);
    QuantizedModel qm = quantize_model(w, cfg, scheme_options("w8a8"));
    const double ppl_q = qperplexity(qm, corpus);
    CHECK(std::abs(ppl_q - ppl_fp) / ppl_fp < 0.02);

    PairedEval pe = paired_eval(qm, w, cfg, corpus);
    CHECK(pe.ppl_fp == doctest::Approx(ppl_fp).epsilon(1e-12));
    CHECK(pe.ppl_q == doctest::Approx(ppl_q).epsilon(1e-12));
    CHECK(pe.agreement > 0.9);
    CHECK(pe.tokens == 255);  // scored predictions: every token but the first
}

TEST_CASE("integer ssm path is shift-only") {
    MambaConfig cfg = toy_config();
    ModelWeights w = synth_weights(cfg, 3, SynthStyle::random);
    QuantizeOptions qo = scheme_options("w8a8");
    qo.rotate = true;
    qo.quantize_ssm = true;
    QuantizedModel qm = quantize_model(w, cfg, qo);
    CHECK(qm.quantize_ssm);

    std::vector<int64_t> corpus = synth_corpus(22, 64, cfg.vocab_size);
    SsmOpCounters ctr;
    const double ppl = qperplexity(qm, corpus, &ctr);
    CHECK(std::isfinite(ppl));
    CHECK(ctr.rescale_mults == 0);
    CHECK(ctr.fp_mults == 0);
    CHECK(ctr.em_int_mults > 0);
    CHECK(ctr.shifts > 0);
}

TEST_CASE("quantized ssm state stays inside int8") {
    MambaConfig cfg = toy_config();
    ModelWeights w = synth_weights(cfg, 5, SynthStyle::random);
    QuantizeOptions qo = scheme_options("w4a4");
    qo.rotate = true;
    qo.quantize_ssm = true;
    QuantizedModel qm = quantize_model(w, cfg, qo);
    QDecodeState st = QDecodeState::init(qm);
    std::vector<int64_t> corpus = synth_corpus(23, 128, cfg.vocab_size);
    for (int64_t t : corpus) {
        qdecode_step(qm, st, t);
        for (const IntSsmState& hq : st.h_q)
            for (int8_t c : hq.codes) {
                CHECK(c >= -128);
                CHECK(c <= 127);
            }
    }
}

TEST_CASE("quantized model dir round trips bit-exactly") {
    MambaConfig cfg = toy_config();
    ModelWeights w = synth_weights(cfg, 3, SynthStyle::random);
    QuantizeOptions qo = scheme_options("w4a4");
    qo.rotate = true;
    qo.quantize_ssm = true;
    QuantizedModel qm = quantize_model(w, cfg, qo);
    qm.source_hash = "feedfacefeedface";

    const std::string dir = tmpdir("qdir");
    save_quantized_dir(dir, qm);
    CHECK(is_quantized_model_dir(dir));
    QuantizedModel qm2 = load_quantized_model(dir);
    CHECK(qm2.weight_scheme.bits == 4);
    CHECK(qm2.act_scheme.bits == 4);
    CHECK(qm2.quantize_ssm);
    CHECK(qm2.recipe.active);
    CHECK(qm2.source_hash == "feedfacefeedface");
    CHECK(qm2.tile.n_p == qm.tile.n_p);

    std::vector<int64_t> corpus = synth_corpus(24, 128, cfg.vocab_size);
    CHECK(qperplexity(qm, corpus) == qperplexity(qm2, corpus));

    // per-step logits agree bit for bit as well
    QDecodeState s1 = QDecodeState::init(qm), s2 = QDecodeState::init(qm2);
    for (int64_t t : {int64_t{1}, int64_t{2}, int64_t{3}}) {
        Tensor a = qdecode_step(qm, s1, t);
        Tensor b = qdecode_step(qm2, s2, t);
        CHECK(max_abs_diff(a, b) == 0.0);
    }
}

TEST_CASE("w4a4 rotation beats plain rtn on outlier-planted weights") {
    MambaConfig cfg = toy_config();
    ModelWeights w = synth_weights(cfg, 4, SynthStyle::outlier_planted);
    std::vector<int64_t> corpus = synth_corpus(25, 256, cfg.vocab_size);
    const double ppl_fp = perplexity(w, cfg, corpus);

    QuantizedModel plain = quantize_model(w, cfg, scheme_options("w4a4"));
    QuantizeOptions qo = scheme_options("w4a4");
    qo.rotate = true;
    QuantizedModel rotated = quantize_model(w, cfg, qo);

    const double gap_plain = std::abs(qperplexity(plain, corpus) - ppl_fp);
    const double gap_rot = std::abs(qperplexity(rotated, corpus) - ppl_fp);
    CHECK(gap_rot < gap_plain);
}

TEST_CASE("decode trace exposes per-layer ssm outputs") {
    MambaConfig cfg = toy_config();
    ModelWeights w = synth_weights(cfg, 3, SynthStyle::random);
    QuantizedModel qm = quantize_model(w, cfg, scheme_options("w8a8"));
    QDecodeState st = QDecodeState::init(qm);
    std::vector<Tensor> ys;
    QDecodeTrace tr;
    tr.ssm_y = &ys;
    qdecode_step(qm, st, 5, nullptr, &tr);
    REQUIRE(static_cast<int64_t>(ys.size()) == cfg.n_layers);
    CHECK(ys[0].numel() == cfg.d_inner());
}
