#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mambaq/model.hpp"
#include "mambaq/quant.hpp"
#include "mambaq/rotation.hpp"

namespace mambaq {

// Instrumentation for the integer SSM path. The shift-only contract is that
// rescale_mults and fp_mults stay zero across any number of steps: multiplies
// appear only as operand x operand elementwise products, and every exponent
// adjustment is a shift.
struct SsmOpCounters {
    uint64_t em_int_mults = 0;
    uint64_t rescale_mults = 0;
    uint64_t fp_mults = 0;
    uint64_t shifts = 0;
    uint64_t adds = 0;
};

// SSM quantization group = one simulator tile: n_p heads x p_p state entries
// (all P positions of those heads share the group).
struct SsmTile {
    int64_t n_p = 4;
    int64_t p_p = 64;
};

// int8 state with one power-of-two exponent per (head-tile x state-tile).
struct IntSsmState {
    int64_t n_heads = 0, P = 0, N = 0;
    SsmTile tile;
    int64_t ht_count = 0, nt_count = 0;
    std::vector<int8_t> codes;  // [n_heads * P * N]
    std::vector<int8_t> exps;   // [ht_count * nt_count]

    static IntSsmState init(int64_t n_heads, int64_t P, int64_t N, SsmTile tile);
};

// PoT-quantized vector with one exponent per group.
struct PotVec {
    std::vector<int8_t> codes;
    std::vector<int8_t> exps;
};

// Quantizes values group-wise with power-of-two scales (groups given by an
// index function over positions). Boundary op: runs in FP, produces codes.
PotVec pot_quantize(const std::vector<double>& v, const std::vector<int64_t>& group_of, int64_t n_groups);

struct QssmInputs {
    PotVec abar;  // per head; groups = head tiles
    PotVec db;    // delta*B per (head, n); groups = (head tile, state tile)
    PotVec x;     // per (head, p); groups = head tiles
    PotVec c;     // per (group, n); groups = (ssm group, state tile)
    PotVec d;     // per head; groups = head tiles
};

struct QssmOutput {
    std::vector<int8_t> y_codes;  // [n_heads * P]
    std::vector<int8_t> y_exps;   // per head tile
};

// Integer-only selective-scan step. Products are int8 x int8 into >=32-bit
// accumulators; exponent alignment and the return to int8 codes use shifts
// with round-half-away (requantize_shift). Raises ScaleOverflowError when an
// exponent leaves [-32, 32] and AccumOverflowError when a sum leaves int32.
QssmOutput qssm_step(IntSsmState& state, const QssmInputs& in, int64_t n_groups, SsmOpCounters* ctr = nullptr);

struct QLayer {
    QuantizedTensor W_in, W_out, conv_w;
    Tensor conv_w_fp;  // dequantized once; the conv activation path stays FP
    Tensor conv_b, norm1, norm2, A_log, dt_bias, D;
    PotVec d_pot;  // D in PoT codes when the SSM is quantized
};

struct QuantizedModel {
    MambaConfig cfg;
    QuantScheme weight_scheme, act_scheme;
    bool quantize_ssm = false;
    bool conv_quantized = true;
    SsmTile tile;
    RotationRecipe recipe;
    HadamardPlan inner_plan;  // only used when recipe.active && sites.pre_outproj
    QuantizedTensor embedding, lm_head;
    Tensor final_norm;
    std::vector<QLayer> layers;
    std::string source_hash;
};

struct QuantizeOptions {
    int weight_bits = 8;
    int act_bits = 8;
    int64_t group_size = 128;  // used by the 4-bit scheme
    bool quantize_ssm = false;
    bool rotate = false;
    RotationOptions rotation;
    SsmTile tile;
};

QuantizeOptions scheme_options(const std::string& scheme);  // "w8a8" | "w4a4"

QuantizedModel quantize_model(const ModelWeights& w, const MambaConfig& cfg, const QuantizeOptions& opts);

// Integer linear: dequantized result of x_q [1 x K or T x K] times W_q
// [K x N]. K-axis group boundaries of the two operands must nest. int32
// accumulators, checked.
Tensor qlinear(const QuantizedTensor& x_q, const QuantizedTensor& W_q);
// convenience: dynamic activation quantization then qlinear
Tensor qlinear_dyn(const Tensor& x_row, const QuantizedTensor& W_q, const QuantScheme& act_scheme);

struct QDecodeState {
    std::vector<Tensor> conv;       // FP conv windows
    std::vector<Tensor> h_fp;       // FP state when !quantize_ssm
    std::vector<IntSsmState> h_q;   // int8 state when quantize_ssm

    static QDecodeState init(const QuantizedModel& qm);
};

struct QDecodeTrace {
    std::vector<Tensor>* ssm_y = nullptr;  // per (step, layer) SSM outputs, appended in order
};

Tensor qdecode_step(const QuantizedModel& qm, QDecodeState& state, int64_t token, SsmOpCounters* ctr = nullptr,
                    QDecodeTrace* trace = nullptr);

double qperplexity(const QuantizedModel& qm, const std::vector<int64_t>& tokens, SsmOpCounters* ctr = nullptr);

struct PairedEval {
    double ppl_q = 0.0;
    double ppl_fp = 0.0;
    double agreement = 0.0;  // fraction of steps with identical argmax
    int64_t tokens = 0;
};
PairedEval paired_eval(const QuantizedModel& qm, const ModelWeights& fp, const MambaConfig& cfg,
                       const std::vector<int64_t>& tokens);

void save_quantized_dir(const std::string& dir, const QuantizedModel& qm);
QuantizedModel load_quantized_model(const std::string& dir);

}  // namespace mambaq
