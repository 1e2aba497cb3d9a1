#pragma once

#include <cstdint>

#include "mambaq/model.hpp"

namespace mambaq {

// Deterministic synthetic models for tests and fixtures. Randomness comes
// from mt19937_64 (bit-exact across platforms) mapped to uniforms with an
// explicit formula, and every generated value is rounded through f32 so a
// model is bit-identical before and after a container round trip.

enum class SynthStyle {
    random,           // smooth random weights, stable decode
    outlier_planted,  // random plus large planted spikes in W_out rows and norm2
};

MambaConfig toy_config();

ModelWeights synth_weights(const MambaConfig& cfg, uint64_t seed, SynthStyle style = SynthStyle::random);

// Bigram construction: one-hot embedding rows, pass-through layers
// (W_out = 0), lm_head holding log-probabilities. Model perplexity on a
// bigram-sampled corpus then equals the chain's analytic perplexity.
// Requires vocab_size <= d_model.
struct BigramFixture {
    MambaConfig cfg;
    ModelWeights weights;
    Tensor logp;  // [vocab x vocab] row-stochastic in log space
};

BigramFixture synth_bigram(uint64_t seed);
std::vector<int64_t> sample_bigram_corpus(const BigramFixture& f, uint64_t seed, int64_t length);
double bigram_perplexity(const Tensor& logp, const std::vector<int64_t>& corpus);

std::vector<int64_t> synth_corpus(uint64_t seed, int64_t length, int64_t vocab);

}  // namespace mambaq
