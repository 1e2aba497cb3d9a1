#include "mambaq/synth.hpp"

#include <cmath>
#include <random>

namespace mambaq {

namespace {

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(uint64_t seed) : gen(seed) {}

    // uniform in (-1, 1); mt19937_64 output is standardized, and the mapping
    // avoids std::uniform_real_distribution (implementation-defined)
    double uniform() {
        const uint64_t u = gen();
        return (static_cast<double>(u >> 11) * (1.0 / 9007199254740992.0)) * 2.0 - 1.0;
    }
    double uniform(double lo, double hi) { return lo + (uniform() * 0.5 + 0.5) * (hi - lo); }
    uint64_t next_u64() { return gen(); }
};

double f32r(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor rand_tensor(Rng& rng, std::vector<int64_t> shape, double scale) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = f32r(rng.uniform() * scale);
    return t;
}

Tensor rand_near_one(Rng& rng, int64_t n, double spread) {
    Tensor t({n});
    for (auto& v : t.data) v = f32r(1.0 + rng.uniform() * spread);
    return t;
}

}  // namespace

MambaConfig toy_config() {
    MambaConfig c;
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.head_dim = 16;
    c.d_state = 16;
    c.n_groups = 1;
    c.conv_kernel = 4;
    c.vocab_size = 256;
    c.expand = 1;
    c.validate();
    return c;
}

ModelWeights synth_weights(const MambaConfig& cfg, uint64_t seed, SynthStyle style) {
    cfg.validate();
    Rng rng(seed);
    const int64_t di = cfg.d_inner();
    const double win_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double wout_scale = 1.0 / std::sqrt(static_cast<double>(di));

    ModelWeights w;
    w.embedding = rand_tensor(rng, {cfg.vocab_size, cfg.d_model}, 1.0);
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        LayerWeights L;
        L.norm1 = rand_near_one(rng, cfg.d_model, 0.2);
        L.W_in = rand_tensor(rng, {cfg.d_model, cfg.d_in_proj()}, win_scale);
        L.conv_w = rand_tensor(rng, {cfg.conv_channels(), cfg.conv_kernel}, 0.5);
        L.conv_b = rand_tensor(rng, {cfg.conv_channels()}, 0.1);
        // abar = exp(-delta*exp(A_log)) kept in a stable band
        L.A_log = Tensor({cfg.n_heads});
        for (auto& v : L.A_log.data) v = f32r(rng.uniform(-1.4, 0.3));
        L.dt_bias = Tensor({cfg.n_heads});
        for (auto& v : L.dt_bias.data) v = f32r(rng.uniform(-1.0, 0.5));
        L.D = rand_tensor(rng, {cfg.n_heads}, 0.5);
        L.norm2 = rand_near_one(rng, di, 0.2);
        L.W_out = rand_tensor(rng, {di, cfg.d_model}, wout_scale);
        if (style == SynthStyle::outlier_planted) {
            // a few spiky rows in W_out and spiky norm2 channels: exactly the
            // scattered-outlier shape rotation is meant to flatten
            const int64_t n_spike = std::max<int64_t>(2, di / 16);
            for (int64_t s = 0; s < n_spike; ++s) {
                const int64_t row = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(di));
                const double boost = rng.uniform(12.0, 24.0);
                for (int64_t c = 0; c < cfg.d_model; ++c) L.W_out.at(row, c) = f32r(L.W_out.at(row, c) * boost);
                L.norm2.data[static_cast<size_t>(row)] = f32r(rng.uniform(6.0, 12.0));
            }
        }
        w.layers.push_back(std::move(L));
    }
    w.final_norm = rand_near_one(rng, cfg.d_model, 0.2);
    w.lm_head = rand_tensor(rng, {cfg.d_model, cfg.vocab_size}, 1.5 / std::sqrt(static_cast<double>(cfg.d_model)));
    return w;
}

BigramFixture synth_bigram(uint64_t seed) {
    BigramFixture f;
    MambaConfig c;
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.head_dim = 16;
    c.d_state = 16;
    c.n_groups = 1;
    c.conv_kernel = 4;
    c.vocab_size = 32;
    c.expand = 1;
    c.validate();
    f.cfg = c;

    Rng rng(seed);
    // random row-stochastic transition matrix with some contrast
    f.logp = Tensor({c.vocab_size, c.vocab_size});
    for (int64_t r = 0; r < c.vocab_size; ++r) {
        double sum = 0.0;
        std::vector<double> p(static_cast<size_t>(c.vocab_size));
        for (auto& v : p) {
            const double u = rng.uniform(0.0, 1.0);
            v = 0.05 + u * u * 4.0;
            sum += v;
        }
        for (int64_t cc = 0; cc < c.vocab_size; ++cc)
            f.logp.at(r, cc) = f32r(std::log(p[static_cast<size_t>(cc)] / sum));
    }

    ModelWeights w = synth_weights(c, seed ^ 0x5eedULL, SynthStyle::random);
    // one-hot embedding rows; rmsnorm(one_hot*c0, ones) = one_hot*sqrt(d)
    const double c0 = 1.0;
    w.embedding = Tensor::zeros({c.vocab_size, c.d_model});
    for (int64_t t = 0; t < c.vocab_size; ++t) w.embedding.at(t, t) = c0;
    // pass-through layers: W_out = 0 leaves the residual stream untouched
    for (auto& L : w.layers) L.W_out = Tensor::zeros({c.d_inner(), c.d_model});
    w.final_norm = Tensor::full({c.d_model}, 1.0);
    // final rmsnorm maps e_t to sqrt(d_model)*e_t (eps makes this approximate;
    // fold the exact factor measured from the norm itself)
    const double eps_gain =
        c0 / std::sqrt(c0 * c0 / static_cast<double>(c.d_model) + c.norm_eps);
    w.lm_head = Tensor::zeros({c.d_model, c.vocab_size});
    for (int64_t t = 0; t < c.vocab_size; ++t)
        for (int64_t v = 0; v < c.vocab_size; ++v) w.lm_head.at(t, v) = f32r(f.logp.at(t, v) / eps_gain);
    f.weights = std::move(w);
    return f;
}

std::vector<int64_t> sample_bigram_corpus(const BigramFixture& f, uint64_t seed, int64_t length) {
    Rng rng(seed);
    const int64_t V = f.cfg.vocab_size;
    std::vector<int64_t> out;
    int64_t cur = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(V));
    out.push_back(cur);
    for (int64_t i = 1; i < length; ++i) {
        const double u = rng.uniform(0.0, 1.0);
        double acc = 0.0;
        int64_t next = V - 1;
        for (int64_t v = 0; v < V; ++v) {
            acc += std::exp(f.logp.at(cur, v));
            if (u < acc) {
                next = v;
                break;
            }
        }
        out.push_back(next);
        cur = next;
    }
    return out;
}

double bigram_perplexity(const Tensor& logp, const std::vector<int64_t>& corpus) {
    double nll = 0.0;
    for (size_t i = 0; i + 1 < corpus.size(); ++i)
        nll -= logp.at(corpus[i], corpus[i + 1]);
    return std::exp(nll / static_cast<double>(corpus.size() - 1));
}

std::vector<int64_t> synth_corpus(uint64_t seed, int64_t length, int64_t vocab) {
    Rng rng(seed);
    std::vector<int64_t> out(static_cast<size_t>(length));
    for (auto& v : out) v = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(vocab));
    return out;
}

}  // namespace mambaq
