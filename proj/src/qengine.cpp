#include "mambaq/qengine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mambaq/container.hpp"
#include "mambaq/error.hpp"

namespace mambaq {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// Alignment shifts are bounded so an int32 product times 2^s stays far from
// the int64 edge. A spread this large means the operand exponents are
// inconsistent, which is a scale problem, not an arithmetic one.
int64_t shl_checked(int64_t v, int s, SsmOpCounters* ctr) {
    if (s < 0 || s > 45) throw ScaleOverflowError("qssm_step: exponent spread " + std::to_string(s));
    if (ctr && s > 0) ctr->shifts++;
    return v << s;
}

int8_t checked_exp(int64_t e, const char* what) {
    if (e < -32 || e > 32)
        throw ScaleOverflowError(std::string(what) + " exponent " + std::to_string(e) + " out of [-32,32]");
    return static_cast<int8_t>(e);
}

constexpr int64_t kAccMax = 2147483647;  // int32 accumulator model

void check_acc(int64_t acc, const char* where) {
    if (acc > kAccMax || acc < -kAccMax - 1) throw AccumOverflowError(std::string(where) + ": int32 accumulator overflow");
}

// normalize an aligned block: pick the shift that brings the max magnitude
// into int8 range. Pure bit arithmetic; no multiplies.
int block_shift(int64_t maxabs) {
    const int nbits = std::bit_width(static_cast<uint64_t>(maxabs));
    return std::max(0, nbits - 7);
}

}  // namespace

IntSsmState IntSsmState::init(int64_t n_heads, int64_t P, int64_t N, SsmTile tile) {
    IntSsmState s;
    s.n_heads = n_heads;
    s.P = P;
    s.N = N;
    tile.n_p = std::max<int64_t>(1, std::min(tile.n_p, n_heads));
    tile.p_p = std::max<int64_t>(1, std::min(tile.p_p, N));
    s.tile = tile;
    s.ht_count = ceil_div(n_heads, tile.n_p);
    s.nt_count = ceil_div(N, tile.p_p);
    s.codes.assign(static_cast<size_t>(n_heads * P * N), 0);
    s.exps.assign(static_cast<size_t>(s.ht_count * s.nt_count), 0);
    return s;
}

PotVec pot_quantize(const std::vector<double>& v, const std::vector<int64_t>& group_of, int64_t n_groups) {
    if (v.size() != group_of.size()) throw DimError("pot_quantize: group map size mismatch");
    PotVec out;
    out.codes.resize(v.size());
    out.exps.assign(static_cast<size_t>(n_groups), 0);
    std::vector<double> gmax(static_cast<size_t>(n_groups), 0.0);
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) throw Error("pot_quantize: non-finite input");
        const size_t g = static_cast<size_t>(group_of[i]);
        gmax[g] = std::max(gmax[g], std::fabs(v[i]));
    }
    std::vector<double> gscale(static_cast<size_t>(n_groups), 1.0);
    for (int64_t g = 0; g < n_groups; ++g) {
        if (gmax[static_cast<size_t>(g)] == 0.0) continue;
        const int e = pot_exponent(gmax[static_cast<size_t>(g)] / 127.0);
        out.exps[static_cast<size_t>(g)] = checked_exp(e, "pot_quantize");
        gscale[static_cast<size_t>(g)] = std::ldexp(1.0, e);
    }
    for (size_t i = 0; i < v.size(); ++i) {
        int64_t c = round_half_away(v[i] / gscale[static_cast<size_t>(group_of[i])]);
        c = std::min<int64_t>(127, std::max<int64_t>(-128, c));
        out.codes[i] = static_cast<int8_t>(c);
    }
    return out;
}

QssmOutput qssm_step(IntSsmState& st, const QssmInputs& in, int64_t n_groups, SsmOpCounters* ctr) {
    const int64_t H = st.n_heads, P = st.P, N = st.N;
    const int64_t htc = st.ht_count, ntc = st.nt_count;
    const int64_t n_p = st.tile.n_p, p_p = st.tile.p_p;
    if (H % n_groups != 0) throw ConfigError("qssm_step: n_heads must divide by n_groups");
    const int64_t hpg = H / n_groups;

    auto expect = [](size_t got, int64_t want, const char* what) {
        if (got != static_cast<size_t>(want))
            throw DimError(std::string("qssm_step: ") + what + " size " + std::to_string(got) + " != " +
                           std::to_string(want));
    };
    expect(in.abar.codes.size(), H, "abar codes");
    expect(in.abar.exps.size(), htc, "abar exps");
    expect(in.x.codes.size(), H * P, "x codes");
    expect(in.x.exps.size(), htc, "x exps");
    expect(in.db.codes.size(), H * N, "db codes");
    expect(in.db.exps.size(), htc * ntc, "db exps");
    expect(in.c.codes.size(), n_groups * N, "c codes");
    expect(in.c.exps.size(), n_groups * ntc, "c exps");
    expect(in.d.codes.size(), H, "d codes");
    expect(in.d.exps.size(), htc, "d exps");

    // state update, one (head-tile x state-tile) group at a time
    std::vector<int64_t> scratch(static_cast<size_t>(n_p * P * p_p));
    for (int64_t ht = 0; ht < htc; ++ht) {
        const int64_t h0 = ht * n_p, h1 = std::min(H, h0 + n_p);
        for (int64_t nt = 0; nt < ntc; ++nt) {
            const int64_t n0 = nt * p_p, n1 = std::min(N, n0 + p_p);
            const int e_h = st.exps[static_cast<size_t>(ht * ntc + nt)];
            const int k1 = in.abar.exps[static_cast<size_t>(ht)] + e_h;
            const int k2 = in.db.exps[static_cast<size_t>(ht * ntc + nt)] + in.x.exps[static_cast<size_t>(ht)];
            const int E = std::min(k1, k2);
            int64_t maxabs = 0;
            size_t w = 0;
            for (int64_t h = h0; h < h1; ++h) {
                const int32_t a_c = in.abar.codes[static_cast<size_t>(h)];
                for (int64_t p = 0; p < P; ++p) {
                    const int32_t x_c = in.x.codes[static_cast<size_t>(h * P + p)];
                    const size_t base = static_cast<size_t>((h * P + p) * N);
                    for (int64_t n = n0; n < n1; ++n) {
                        const int32_t t1 = a_c * st.codes[base + static_cast<size_t>(n)];
                        const int32_t t2 = in.db.codes[static_cast<size_t>(h * N + n)] * x_c;
                        if (ctr) ctr->em_int_mults += 2;
                        const int64_t s = shl_checked(t1, k1 - E, ctr) + shl_checked(t2, k2 - E, ctr);
                        if (ctr) ctr->adds++;
                        scratch[w++] = s;
                        maxabs = std::max(maxabs, s < 0 ? -s : s);
                    }
                }
            }
            if (maxabs == 0) {
                for (int64_t h = h0; h < h1; ++h)
                    for (int64_t p = 0; p < P; ++p)
                        for (int64_t n = n0; n < n1; ++n) st.codes[static_cast<size_t>((h * P + p) * N + n)] = 0;
                st.exps[static_cast<size_t>(ht * ntc + nt)] = static_cast<int8_t>(std::min(32, std::max(-32, E)));
                continue;
            }
            const int shift = block_shift(maxabs);
            st.exps[static_cast<size_t>(ht * ntc + nt)] = checked_exp(E + shift, "qssm_step state");
            w = 0;
            for (int64_t h = h0; h < h1; ++h)
                for (int64_t p = 0; p < P; ++p)
                    for (int64_t n = n0; n < n1; ++n) {
                        if (ctr && shift > 0) ctr->shifts++;
                        st.codes[static_cast<size_t>((h * P + p) * N + n)] =
                            static_cast<int8_t>(requantize_shift(scratch[w++], shift, 8));
                    }
        }
    }

    // output pass: y[h,p] = sum_n C[g,n] h'[h,p,n] + D[h] x[h,p], aligned to a
    // common exponent per head tile, then renormalized to int8
    QssmOutput out;
    out.y_codes.assign(static_cast<size_t>(H * P), 0);
    out.y_exps.assign(static_cast<size_t>(htc), 0);
    std::vector<int64_t> yraw(static_cast<size_t>(n_p * P));
    for (int64_t ht = 0; ht < htc; ++ht) {
        const int64_t h0 = ht * n_p, h1 = std::min(H, h0 + n_p);
        const int e_dx = in.d.exps[static_cast<size_t>(ht)] + in.x.exps[static_cast<size_t>(ht)];
        int E = e_dx;
        for (int64_t h = h0; h < h1; ++h) {
            const int64_t g = h / hpg;
            for (int64_t nt = 0; nt < ntc; ++nt)
                E = std::min(E, static_cast<int>(in.c.exps[static_cast<size_t>(g * ntc + nt)]) +
                                    st.exps[static_cast<size_t>(ht * ntc + nt)]);
        }
        int64_t maxabs = 0;
        size_t w = 0;
        for (int64_t h = h0; h < h1; ++h) {
            const int64_t g = h / hpg;
            for (int64_t p = 0; p < P; ++p) {
                const size_t base = static_cast<size_t>((h * P + p) * N);
                int64_t y = 0;
                for (int64_t nt = 0; nt < ntc; ++nt) {
                    const int64_t n0 = nt * p_p, n1 = std::min(N, n0 + p_p);
                    int64_t acc = 0;
                    for (int64_t n = n0; n < n1; ++n) {
                        acc += static_cast<int32_t>(in.c.codes[static_cast<size_t>(g * N + n)]) *
                               st.codes[base + static_cast<size_t>(n)];
                        if (ctr) {
                            ctr->em_int_mults++;
                            ctr->adds++;
                        }
                        check_acc(acc, "qssm_step Ch reduction");
                    }
                    const int e_nt = in.c.exps[static_cast<size_t>(g * ntc + nt)] +
                                     st.exps[static_cast<size_t>(ht * ntc + nt)];
                    y += shl_checked(acc, e_nt - E, ctr);
                }
                const int32_t dx = static_cast<int32_t>(in.d.codes[static_cast<size_t>(h)]) *
                                   in.x.codes[static_cast<size_t>(h * P + p)];
                if (ctr) {
                    ctr->em_int_mults++;
                    ctr->adds++;
                }
                y += shl_checked(dx, e_dx - E, ctr);
                yraw[w++] = y;
                maxabs = std::max(maxabs, y < 0 ? -y : y);
            }
        }
        if (maxabs == 0) {
            out.y_exps[static_cast<size_t>(ht)] = static_cast<int8_t>(std::min(32, std::max(-32, E)));
            continue;
        }
        const int shift = block_shift(maxabs);
        out.y_exps[static_cast<size_t>(ht)] = checked_exp(E + shift, "qssm_step output");
        w = 0;
        for (int64_t h = h0; h < h1; ++h)
            for (int64_t p = 0; p < P; ++p) {
                if (ctr && shift > 0) ctr->shifts++;
                out.y_codes[static_cast<size_t>(h * P + p)] =
                    static_cast<int8_t>(requantize_shift(yraw[w++], shift, 8));
            }
    }
    return out;
}

Tensor qlinear(const QuantizedTensor& x_q, const QuantizedTensor& W_q) {
    if (W_q.shape.size() != 2) throw DimError("qlinear: weight must be rank 2, got " + shape_str(W_q.shape));
    if (x_q.shape.size() < 1 || x_q.shape.size() > 2)
        throw DimError("qlinear: input must be rank 1 or 2, got " + shape_str(x_q.shape));
    const int64_t T = x_q.grid.rows, K = x_q.grid.cols;
    const int64_t N = W_q.shape[1];
    if (W_q.shape[0] != K)
        throw DimError("qlinear: inner dim mismatch " + shape_str(x_q.shape) + " x " + shape_str(W_q.shape));

    const int64_t xb = x_q.grid.col_block, wb = W_q.grid.row_block;
    const int64_t F = std::min(xb, wb);
    if (std::max(xb, wb) % F != 0)
        throw DimError("qlinear: K-axis group blocks " + std::to_string(xb) + " and " + std::to_string(wb) +
                       " do not nest");

    const std::vector<int8_t> xc = x_q.unpack_codes();
    const std::vector<int8_t> wc = W_q.unpack_codes();

    Tensor out(x_q.shape.size() == 2 ? std::vector<int64_t>{T, N} : std::vector<int64_t>{N});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t n = 0; n < N; ++n) {
            double o = 0.0;
            for (int64_t k0 = 0; k0 < K; k0 += F) {
                const int64_t k1 = std::min(K, k0 + F);
                int64_t acc = 0;
                for (int64_t k = k0; k < k1; ++k) {
                    acc += static_cast<int32_t>(xc[static_cast<size_t>(t * K + k)]) *
                           wc[static_cast<size_t>(k * N + n)];
                    check_acc(acc, "qlinear");
                }
                o += x_q.scale_at(t, k0) * W_q.scale_at(k0, n) * static_cast<double>(acc);
            }
            out.data[static_cast<size_t>(t * N + n)] = o;
        }
    return out;
}

Tensor qlinear_dyn(const Tensor& x_row, const QuantizedTensor& W_q, const QuantScheme& act_scheme) {
    Tensor row = x_row;
    std::vector<int64_t> orig = row.shape;
    if (row.shape.size() == 1) row.shape = {1, row.shape[0]};
    QuantizedTensor xq = quantize_rtn(row, act_scheme);
    Tensor y = qlinear(xq, W_q);
    if (orig.size() == 1) y.shape = {y.numel()};
    return y;
}

QuantizeOptions scheme_options(const std::string& scheme) {
    QuantizeOptions o;
    if (scheme == "w8a8") {
        o.weight_bits = 8;
        o.act_bits = 8;
    } else if (scheme == "w4a4") {
        o.weight_bits = 4;
        o.act_bits = 4;
    } else {
        throw ConfigError("unknown scheme '" + scheme + "' (expected w8a8 or w4a4)");
    }
    return o;
}

namespace {

QuantScheme weight_scheme_for(const QuantizeOptions& o) {
    QuantScheme s;
    s.bits = o.weight_bits;
    if (o.weight_bits == 4) {
        s.granularity = Granularity::per_group;
        s.group_size = o.group_size;
        s.group_axis = GroupAxis::rows;  // blocks along K
    } else {
        s.granularity = Granularity::per_channel;
    }
    return s;
}

QuantScheme act_scheme_for(const QuantizeOptions& o) {
    QuantScheme s;
    s.bits = o.act_bits;
    if (o.act_bits == 4) {
        s.granularity = Granularity::per_group;
        s.group_size = o.group_size;
        s.group_axis = GroupAxis::cols;  // blocks along the feature axis
    } else {
        s.granularity = Granularity::per_token;
    }
    return s;
}

// persisted scales ride in f32 sidecars; snap them at quantize time so a
// model evaluates identically before and after a container round trip
QuantizedTensor quantize_stored(const Tensor& x, const QuantScheme& scheme) {
    QuantizedTensor q = quantize_rtn(x, scheme);
    for (double& s : q.scales) s = static_cast<double>(static_cast<float>(s));
    return q;
}

std::vector<int64_t> head_tile_map(int64_t H, int64_t n_p) {
    std::vector<int64_t> m(static_cast<size_t>(H));
    for (int64_t h = 0; h < H; ++h) m[static_cast<size_t>(h)] = h / n_p;
    return m;
}

PotVec pot_quantize_heads(const Tensor& t, int64_t n_p) {
    const int64_t H = t.numel();
    return pot_quantize(t.data, head_tile_map(H, n_p), ceil_div(H, n_p));
}

}  // namespace

QuantizedModel quantize_model(const ModelWeights& w, const MambaConfig& cfg, const QuantizeOptions& opts) {
    cfg.validate();
    w.validate(cfg);

    QuantizedModel qm;
    qm.cfg = cfg;
    qm.weight_scheme = weight_scheme_for(opts);
    qm.act_scheme = act_scheme_for(opts);
    qm.weight_scheme.validate();
    qm.act_scheme.validate();
    qm.quantize_ssm = opts.quantize_ssm;
    qm.tile.n_p = std::max<int64_t>(1, std::min(opts.tile.n_p, cfg.n_heads));
    qm.tile.p_p = std::max<int64_t>(1, std::min(opts.tile.p_p, cfg.d_state));

    const ModelWeights* src = &w;
    RotatedModel rm;
    if (opts.rotate) {
        rm = build_rotated_model(w, cfg, opts.rotation);
        qm.recipe = rm.recipe;
        qm.inner_plan = rm.inner_plan;
        src = &rm.weights;
    }

    // embedding rows behave like activations: one scale per row
    QuantScheme emb_scheme;
    emb_scheme.bits = opts.weight_bits;
    emb_scheme.granularity = Granularity::per_token;
    qm.embedding = quantize_stored(src->embedding, emb_scheme);
    qm.lm_head = quantize_stored(src->lm_head, qm.weight_scheme);
    qm.final_norm = src->final_norm;

    QuantScheme conv_scheme;
    conv_scheme.bits = opts.weight_bits;
    conv_scheme.granularity = Granularity::per_group;
    conv_scheme.group_size = cfg.conv_kernel;  // one scale per channel row
    conv_scheme.group_axis = GroupAxis::cols;

    qm.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& L = src->layers[static_cast<size_t>(l)];
        QLayer& q = qm.layers[static_cast<size_t>(l)];
        q.W_in = quantize_stored(L.W_in, qm.weight_scheme);
        q.W_out = quantize_stored(L.W_out, qm.weight_scheme);
        q.conv_w = quantize_stored(L.conv_w, conv_scheme);
        q.conv_w_fp = dequantize(q.conv_w);
        q.conv_b = L.conv_b;
        q.norm1 = L.norm1;
        q.norm2 = L.norm2;
        q.A_log = L.A_log;
        q.dt_bias = L.dt_bias;
        q.D = L.D;
        if (qm.quantize_ssm) q.d_pot = pot_quantize_heads(L.D, qm.tile.n_p);
    }
    return qm;
}

QDecodeState QDecodeState::init(const QuantizedModel& qm) {
    QDecodeState s;
    const MambaConfig& c = qm.cfg;
    for (int64_t l = 0; l < c.n_layers; ++l) {
        s.conv.push_back(Tensor::zeros({c.conv_channels(), std::max<int64_t>(1, c.conv_kernel - 1)}));
        if (qm.quantize_ssm)
            s.h_q.push_back(IntSsmState::init(c.n_heads, c.head_dim, c.d_state, qm.tile));
        else
            s.h_fp.push_back(Tensor::zeros({c.n_heads, c.head_dim, c.d_state}));
    }
    return s;
}

Tensor qdecode_step(const QuantizedModel& qm, QDecodeState& state, int64_t token, SsmOpCounters* ctr,
                    QDecodeTrace* trace) {
    const MambaConfig& cfg = qm.cfg;
    if (token < 0 || token >= cfg.vocab_size)
        throw Error("token id " + std::to_string(token) + " out of vocab " + std::to_string(cfg.vocab_size));
    const int64_t di = cfg.d_inner(), H = cfg.n_heads, P = cfg.head_dim, N = cfg.d_state, G = cfg.n_groups;
    const int64_t htc = ceil_div(H, qm.tile.n_p), ntc = ceil_div(N, qm.tile.p_p);

    Tensor u({cfg.d_model});
    for (int64_t j = 0; j < cfg.d_model; ++j) {
        const int64_t i = token * cfg.d_model + j;
        u.data[static_cast<size_t>(j)] = qm.embedding.code(i) * qm.embedding.scale_at(token, j);
    }

    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const QLayer& L = qm.layers[static_cast<size_t>(l)];
        Tensor resid = u;
        Tensor t = rmsnorm(u, L.norm1, cfg.norm_eps);
        Tensor proj = qlinear_dyn(t, L.W_in, qm.act_scheme);

        // split [z | x | B | C | dt]
        Tensor z({di}), xin({di}), Braw({G * N}), Craw({G * N}), dt_raw({H});
        {
            const double* p = proj.data.data();
            std::copy(p, p + di, z.data.begin());
            std::copy(p + di, p + 2 * di, xin.data.begin());
            std::copy(p + 2 * di, p + 2 * di + G * N, Braw.data.begin());
            std::copy(p + 2 * di + G * N, p + 2 * di + 2 * G * N, Craw.data.begin());
            std::copy(p + 2 * di + 2 * G * N, p + cfg.d_in_proj(), dt_raw.data.begin());
        }

        Tensor xbc({cfg.conv_channels()});
        std::copy(xin.data.begin(), xin.data.end(), xbc.data.begin());
        std::copy(Braw.data.begin(), Braw.data.end(), xbc.data.begin() + di);
        std::copy(Craw.data.begin(), Craw.data.end(), xbc.data.begin() + di + G * N);
        Tensor xbc_out = conv1d_step(state.conv[static_cast<size_t>(l)], xbc, L.conv_w_fp, L.conv_b);

        Tensor xc({H, P}), Bc({G, N}), Cc({G, N});
        std::copy(xbc_out.data.begin(), xbc_out.data.begin() + di, xc.data.begin());
        std::copy(xbc_out.data.begin() + di, xbc_out.data.begin() + di + G * N, Bc.data.begin());
        std::copy(xbc_out.data.begin() + di + G * N, xbc_out.data.end(), Cc.data.begin());

        Tensor delta({H}), abar({H});
        for (int64_t h = 0; h < H; ++h) {
            const double dt = softplus_scalar(dt_raw.data[static_cast<size_t>(h)] + L.dt_bias.data[static_cast<size_t>(h)]);
            delta.data[static_cast<size_t>(h)] = dt;
            abar.data[static_cast<size_t>(h)] = std::exp(dt * -std::exp(L.A_log.data[static_cast<size_t>(h)]));
        }

        Tensor y;
        if (qm.quantize_ssm) {
            QssmInputs in;
            in.abar = pot_quantize_heads(abar, qm.tile.n_p);
            in.x = pot_quantize(xc.data, [&] {
                std::vector<int64_t> m(static_cast<size_t>(H * P));
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t p = 0; p < P; ++p) m[static_cast<size_t>(h * P + p)] = h / qm.tile.n_p;
                return m;
            }(), htc);
            {
                std::vector<double> db(static_cast<size_t>(H * N));
                std::vector<int64_t> m(static_cast<size_t>(H * N));
                const int64_t hpg = H / G;
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t n = 0; n < N; ++n) {
                        db[static_cast<size_t>(h * N + n)] =
                            delta.data[static_cast<size_t>(h)] * Bc.data[static_cast<size_t>((h / hpg) * N + n)];
                        m[static_cast<size_t>(h * N + n)] = (h / qm.tile.n_p) * ntc + n / qm.tile.p_p;
                    }
                in.db = pot_quantize(db, m, htc * ntc);
            }
            {
                std::vector<int64_t> m(static_cast<size_t>(G * N));
                for (int64_t g = 0; g < G; ++g)
                    for (int64_t n = 0; n < N; ++n)
                        m[static_cast<size_t>(g * N + n)] = g * ntc + n / qm.tile.p_p;
                in.c = pot_quantize(Cc.data, m, G * ntc);
            }
            in.d = L.d_pot;
            QssmOutput qy = qssm_step(state.h_q[static_cast<size_t>(l)], in, G, ctr);
            y = Tensor({H, P});
            for (int64_t h = 0; h < H; ++h)
                for (int64_t p = 0; p < P; ++p)
                    y.data[static_cast<size_t>(h * P + p)] =
                        qy.y_codes[static_cast<size_t>(h * P + p)] *
                        std::ldexp(1.0, qy.y_exps[static_cast<size_t>(h / qm.tile.n_p)]);
        } else {
            y = ssm_step(state.h_fp[static_cast<size_t>(l)], abar, delta, Bc, Cc, xc, L.D, G);
        }
        if (trace && trace->ssm_y) trace->ssm_y->push_back(y);

        Tensor gate_in({di});
        for (int64_t i = 0; i < di; ++i)
            gate_in.data[static_cast<size_t>(i)] =
                y.data[static_cast<size_t>(i)] * silu_scalar(z.data[static_cast<size_t>(i)]);
        Tensor gated = rmsnorm(gate_in, L.norm2, cfg.norm_eps);
        // the online transform runs in high precision; its output is what gets
        // re-quantized on the way into the out-projection
        if (qm.recipe.active && qm.recipe.sites.pre_outproj) gated = apply_rotation(gated, qm.inner_plan);

        Tensor out = qlinear_dyn(gated, L.W_out, qm.act_scheme);
        for (int64_t i = 0; i < cfg.d_model; ++i)
            u.data[static_cast<size_t>(i)] = resid.data[static_cast<size_t>(i)] + out.data[static_cast<size_t>(i)];
    }

    Tensor fin = rmsnorm(u, qm.final_norm, cfg.norm_eps);
    Tensor logits = qlinear_dyn(fin, qm.lm_head, qm.act_scheme);
    return logits;
}

double qperplexity(const QuantizedModel& qm, const std::vector<int64_t>& tokens, SsmOpCounters* ctr) {
    if (tokens.size() < 2) throw Error("perplexity needs at least 2 tokens");
    QDecodeState st = QDecodeState::init(qm);
    double nll = 0.0;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        Tensor logits = qdecode_step(qm, st, tokens[i], ctr);
        nll += nll_from_logits(logits, tokens[i + 1]);
    }
    return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

PairedEval paired_eval(const QuantizedModel& qm, const ModelWeights& fp, const MambaConfig& cfg,
                       const std::vector<int64_t>& tokens) {
    if (tokens.size() < 2) throw Error("paired_eval needs at least 2 tokens");
    QDecodeState qs = QDecodeState::init(qm);
    DecodeState fs = DecodeState::init(cfg);
    PairedEval r;
    double nll_q = 0.0, nll_fp = 0.0;
    int64_t agree = 0;
    const int64_t steps = static_cast<int64_t>(tokens.size()) - 1;
    for (int64_t i = 0; i < steps; ++i) {
        Tensor lq = qdecode_step(qm, qs, tokens[static_cast<size_t>(i)]);
        Tensor lf = decode_step(fp, cfg, fs, tokens[static_cast<size_t>(i)]);
        nll_q += nll_from_logits(lq, tokens[static_cast<size_t>(i + 1)]);
        nll_fp += nll_from_logits(lf, tokens[static_cast<size_t>(i + 1)]);
        if (argmax(lq) == argmax(lf)) agree++;
    }
    r.ppl_q = std::exp(nll_q / static_cast<double>(steps));
    r.ppl_fp = std::exp(nll_fp / static_cast<double>(steps));
    r.agreement = static_cast<double>(agree) / static_cast<double>(steps);
    r.tokens = steps;
    return r;
}

namespace {

nlohmann::json scheme_json(const QuantScheme& s) {
    return {{"bits", s.bits},
            {"granularity", granularity_name(s.granularity)},
            {"group_size", s.group_size},
            {"scale_kind", scale_kind_name(s.scale_kind)},
            {"group_axis", s.group_axis == GroupAxis::rows ? "rows" : "cols"}};
}

QuantScheme scheme_from_json(const nlohmann::json& j) {
    QuantScheme s;
    s.bits = j.at("bits").get<int>();
    s.granularity = granularity_from_name(j.at("granularity").get<std::string>());
    s.group_size = j.at("group_size").get<int64_t>();
    s.scale_kind = scale_kind_from_name(j.at("scale_kind").get<std::string>());
    s.group_axis = j.at("group_axis").get<std::string>() == "rows" ? GroupAxis::rows : GroupAxis::cols;
    s.validate();
    return s;
}

}  // namespace

void save_quantized_dir(const std::string& dir, const QuantizedModel& qm) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    qm.cfg.save(dir + "/config.json");

    nlohmann::json meta;
    meta["version"] = 1;
    meta["weights"] = scheme_json(qm.weight_scheme);
    meta["activations"] = scheme_json(qm.act_scheme);
    meta["quantize_ssm"] = qm.quantize_ssm;
    meta["conv_quantized"] = qm.conv_quantized;
    meta["ssm_tile"] = {{"n_p", qm.tile.n_p}, {"p_p", qm.tile.p_p}};
    meta["rotation"] = qm.recipe.active ? nlohmann::json::parse(qm.recipe.to_json()) : nlohmann::json(nullptr);
    meta["source_hash"] = qm.source_hash;
    std::ofstream f(dir + "/quant.json");
    if (!f) throw IoError("cannot write " + dir + "/quant.json");
    f << meta.dump(2) << "\n";

    ContainerWriter wtr;
    wtr.add_quantized("embedding", qm.embedding);
    for (int64_t l = 0; l < qm.cfg.n_layers; ++l) {
        const QLayer& L = qm.layers[static_cast<size_t>(l)];
        const std::string p = "layers." + std::to_string(l) + ".";
        wtr.add_f32(p + "norm1", L.norm1);
        wtr.add_quantized(p + "W_in", L.W_in);
        wtr.add_quantized(p + "conv_w", L.conv_w);
        wtr.add_f32(p + "conv_b", L.conv_b);
        wtr.add_f32(p + "A_log", L.A_log);
        wtr.add_f32(p + "dt_bias", L.dt_bias);
        wtr.add_f32(p + "D", L.D);
        wtr.add_f32(p + "norm2", L.norm2);
        wtr.add_quantized(p + "W_out", L.W_out);
    }
    wtr.add_f32("final_norm", qm.final_norm);
    wtr.add_quantized("lm_head", qm.lm_head);
    wtr.write(dir + "/weights.mqw");
}

QuantizedModel load_quantized_model(const std::string& dir) {
    QuantizedModel qm;
    qm.cfg = MambaConfig::load(dir + "/config.json");

    std::ifstream f(dir + "/quant.json");
    if (!f) throw IoError("cannot read " + dir + "/quant.json");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("quant.json: ") + e.what());
    }
    try {
        qm.weight_scheme = scheme_from_json(meta.at("weights"));
        qm.act_scheme = scheme_from_json(meta.at("activations"));
        qm.quantize_ssm = meta.at("quantize_ssm").get<bool>();
        qm.conv_quantized = meta.value("conv_quantized", true);
        qm.tile.n_p = meta.at("ssm_tile").at("n_p").get<int64_t>();
        qm.tile.p_p = meta.at("ssm_tile").at("p_p").get<int64_t>();
        if (!meta.at("rotation").is_null()) qm.recipe = RotationRecipe::from_json(meta.at("rotation").dump());
        qm.source_hash = meta.value("source_hash", std::string());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("quant.json: ") + e.what());
    }
    if (qm.recipe.active && qm.recipe.sites.pre_outproj)
        qm.inner_plan = plan_from_dims(qm.recipe.inner_n, qm.recipe.inner_pot, qm.recipe.inner_small);

    ContainerReader rdr(dir + "/weights.mqw");
    qm.embedding = rdr.read_quantized("embedding");
    qm.final_norm = rdr.read_f32("final_norm");
    qm.lm_head = rdr.read_quantized("lm_head");
    qm.layers.resize(static_cast<size_t>(qm.cfg.n_layers));
    for (int64_t l = 0; l < qm.cfg.n_layers; ++l) {
        QLayer& L = qm.layers[static_cast<size_t>(l)];
        const std::string p = "layers." + std::to_string(l) + ".";
        L.norm1 = rdr.read_f32(p + "norm1");
        L.W_in = rdr.read_quantized(p + "W_in");
        L.conv_w = rdr.read_quantized(p + "conv_w");
        L.conv_w_fp = dequantize(L.conv_w);
        L.conv_b = rdr.read_f32(p + "conv_b");
        L.A_log = rdr.read_f32(p + "A_log");
        L.dt_bias = rdr.read_f32(p + "dt_bias");
        L.D = rdr.read_f32(p + "D");
        L.norm2 = rdr.read_f32(p + "norm2");
        L.W_out = rdr.read_quantized(p + "W_out");
        if (qm.quantize_ssm) L.d_pot = pot_quantize_heads(L.D, qm.tile.n_p);
    }
    return qm;
}

}  // namespace mambaq
