#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mambaq/hadamard.hpp"
#include "mambaq/tensor.hpp"

namespace mambaq {

struct MambaConfig {
    int64_t d_model = 0;
    int64_t n_layers = 0;
    int64_t n_heads = 0;
    int64_t head_dim = 0;   // P
    int64_t d_state = 0;    // N
    int64_t n_groups = 1;
    int64_t conv_kernel = 4;
    int64_t vocab_size = 0;
    int64_t expand = 2;
    double norm_eps = 1e-5;

    int64_t d_inner() const { return n_heads * head_dim; }
    int64_t d_in_proj() const { return 2 * d_inner() + 2 * n_groups * d_state + n_heads; }
    int64_t conv_channels() const { return d_inner() + 2 * n_groups * d_state; }

    void validate() const;
    std::string to_json() const;
    static MambaConfig from_json(const std::string& text);
    static MambaConfig load(const std::string& path);
    void save(const std::string& path) const;
};

// in-projection column layout: [z (d_inner) | x (d_inner) | B (n_groups*N) | C (n_groups*N) | dt (n_heads)]
struct LayerWeights {
    Tensor norm1;    // [d_model]
    Tensor W_in;     // [d_model x d_in_proj]
    Tensor conv_w;   // [conv_channels x k]
    Tensor conv_b;   // [conv_channels]
    Tensor A_log;    // [n_heads]
    Tensor dt_bias;  // [n_heads]
    Tensor D;        // [n_heads]
    Tensor norm2;    // [d_inner]
    Tensor W_out;    // [d_inner x d_model]
};

struct ModelWeights {
    Tensor embedding;  // [vocab x d_model]
    std::vector<LayerWeights> layers;
    Tensor final_norm;  // [d_model]
    Tensor lm_head;     // [d_model x vocab]

    void validate(const MambaConfig& cfg) const;
};

struct DecodeState {
    std::vector<Tensor> conv;  // per layer [conv_channels x (k-1)]
    std::vector<Tensor> h;     // per layer [n_heads x P x N]

    static DecodeState init(const MambaConfig& cfg);
};

// Selective state update, Euler discretization:
//   h'[h,p,n] = abar[h] * h[h,p,n] + delta[h] * B[g(h),n] * x[h,p]
//   y[h,p]    = sum_n C[g(h),n] * h'[h,p,n] + D[h] * x[h,p]
// h is updated in place; returns y [n_heads x P].
Tensor ssm_step(Tensor& h, const Tensor& abar, const Tensor& delta, const Tensor& B, const Tensor& C,
                const Tensor& x, const Tensor& D, int64_t n_groups);

// One decode step; state is advanced in place, returns logits [vocab].
// online_pre_outproj, when set, rotates the out-projection input row on the
// fly (the only rotation site that cannot be folded into weights).
Tensor decode_step(const ModelWeights& w, const MambaConfig& cfg, DecodeState& state, int64_t token,
                   const HadamardPlan* online_pre_outproj = nullptr);

// Teacher-forced perplexity over a token stream (predicts tokens[1..]).
double perplexity(const ModelWeights& w, const MambaConfig& cfg, const std::vector<int64_t>& tokens,
                  const HadamardPlan* online_pre_outproj = nullptr);

double nll_from_logits(const Tensor& logits, int64_t target);
int64_t argmax(const Tensor& logits);

std::vector<int64_t> load_corpus(const std::string& path, int64_t vocab_size);

// FP model directory: config.json + weights.mqw (f32 container). Tensor names
// follow "embedding", "layers.<i>.<field>", "final_norm", "lm_head".
void save_model_dir(const std::string& dir, const MambaConfig& cfg, const ModelWeights& w);
ModelWeights load_model_weights(const std::string& container_path, const MambaConfig& cfg);
bool is_quantized_model_dir(const std::string& dir);

}  // namespace mambaq
