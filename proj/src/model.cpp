#include "mambaq/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mambaq/container.hpp"

namespace mambaq {

using nlohmann::json;

void MambaConfig::validate() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || head_dim < 1 || d_state < 1 || vocab_size < 1)
        throw ConfigError("all model dims must be positive");
    if (n_groups < 1) throw ConfigError("n_groups must be >= 1");
    if (conv_kernel < 1) throw ConfigError("conv_kernel must be >= 1");
    if (n_heads % n_groups != 0) throw ConfigError("n_heads must be divisible by n_groups");
    if (expand * d_model != d_inner())
        throw ConfigError("d_inner mismatch: expand*d_model = " + std::to_string(expand * d_model) +
                          " but n_heads*head_dim = " + std::to_string(d_inner()));
    if (!(norm_eps >= 0.0)) throw ConfigError("norm_eps must be >= 0");
}

std::string MambaConfig::to_json() const {
    json j;
    j["d_model"] = d_model;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["head_dim"] = head_dim;
    j["d_state"] = d_state;
    j["n_groups"] = n_groups;
    j["conv_kernel"] = conv_kernel;
    j["vocab_size"] = vocab_size;
    j["expand"] = expand;
    j["norm_eps"] = norm_eps;
    return j.dump(2) + "\n";
}

MambaConfig MambaConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config json: ") + e.what());
    }
    MambaConfig c;
    try {
        c.d_model = j.at("d_model").get<int64_t>();
        c.n_layers = j.at("n_layers").get<int64_t>();
        c.n_heads = j.at("n_heads").get<int64_t>();
        c.head_dim = j.at("head_dim").get<int64_t>();
        c.d_state = j.at("d_state").get<int64_t>();
        c.vocab_size = j.at("vocab_size").get<int64_t>();
        c.n_groups = j.value("n_groups", int64_t{1});
        c.conv_kernel = j.value("conv_kernel", int64_t{4});
        c.expand = j.value("expand", int64_t{2});
        c.norm_eps = j.value("norm_eps", 1e-5);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("missing config key: ") + e.what());
    }
    c.validate();
    return c;
}

MambaConfig MambaConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

void MambaConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config " + path);
    f << to_json();
}

void ModelWeights::validate(const MambaConfig& cfg) const {
    embedding.require_shape({cfg.vocab_size, cfg.d_model}, "embedding");
    if (static_cast<int64_t>(layers.size()) != cfg.n_layers)
        throw DimError("expected " + std::to_string(cfg.n_layers) + " layers, got " + std::to_string(layers.size()));
    const int64_t di = cfg.d_inner();
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        L.norm1.require_shape({cfg.d_model}, (p + "norm1").c_str());
        L.W_in.require_shape({cfg.d_model, cfg.d_in_proj()}, (p + "W_in").c_str());
        L.conv_w.require_shape({cfg.conv_channels(), cfg.conv_kernel}, (p + "conv_w").c_str());
        L.conv_b.require_shape({cfg.conv_channels()}, (p + "conv_b").c_str());
        L.A_log.require_shape({cfg.n_heads}, (p + "A_log").c_str());
        L.dt_bias.require_shape({cfg.n_heads}, (p + "dt_bias").c_str());
        L.D.require_shape({cfg.n_heads}, (p + "D").c_str());
        L.norm2.require_shape({di}, (p + "norm2").c_str());
        L.W_out.require_shape({di, cfg.d_model}, (p + "W_out").c_str());
    }
    final_norm.require_shape({cfg.d_model}, "final_norm");
    lm_head.require_shape({cfg.d_model, cfg.vocab_size}, "lm_head");
}

DecodeState DecodeState::init(const MambaConfig& cfg) {
    DecodeState s;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        s.conv.push_back(Tensor::zeros({cfg.conv_channels(), cfg.conv_kernel - 1}));
        s.h.push_back(Tensor::zeros({cfg.n_heads, cfg.head_dim, cfg.d_state}));
    }
    return s;
}

Tensor ssm_step(Tensor& h, const Tensor& abar, const Tensor& delta, const Tensor& B, const Tensor& C,
                const Tensor& x, const Tensor& D, int64_t n_groups) {
    const int64_t nh = h.dim(0), P = h.dim(1), N = h.dim(2);
    abar.require_shape({nh}, "ssm abar");
    delta.require_shape({nh}, "ssm delta");
    B.require_shape({n_groups, N}, "ssm B");
    C.require_shape({n_groups, N}, "ssm C");
    x.require_shape({nh, P}, "ssm x");
    D.require_shape({nh}, "ssm D");
    if (nh % n_groups != 0) throw DimError("ssm_step: heads not divisible by groups");
    const int64_t heads_per_group = nh / n_groups;

    Tensor y({nh, P});
    for (int64_t hd = 0; hd < nh; ++hd) {
        const int64_t g = hd / heads_per_group;
        const double a = abar.data[static_cast<size_t>(hd)];
        const double dt = delta.data[static_cast<size_t>(hd)];
        const double* Bg = &B.data[static_cast<size_t>(g * N)];
        const double* Cg = &C.data[static_cast<size_t>(g * N)];
        for (int64_t p = 0; p < P; ++p) {
            const double xv = x.data[static_cast<size_t>(hd * P + p)];
            double* hrow = &h.data[static_cast<size_t>((hd * P + p) * N)];
            double acc = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                hrow[n] = a * hrow[n] + dt * Bg[n] * xv;
                acc += Cg[n] * hrow[n];
            }
            y.data[static_cast<size_t>(hd * P + p)] = acc + D.data[static_cast<size_t>(hd)] * xv;
        }
    }
    return y;
}

namespace {

struct ProjSplit {
    Tensor z, x, B, C, dt_raw;
};

ProjSplit split_in_proj(const Tensor& proj, const MambaConfig& cfg) {
    const int64_t di = cfg.d_inner();
    const int64_t gn = cfg.n_groups * cfg.d_state;
    ProjSplit s;
    s.z = Tensor({di});
    s.x = Tensor({di});
    s.B = Tensor({cfg.n_groups, cfg.d_state});
    s.C = Tensor({cfg.n_groups, cfg.d_state});
    s.dt_raw = Tensor({cfg.n_heads});
    const double* p = proj.data.data();
    std::copy(p, p + di, s.z.data.data());
    std::copy(p + di, p + 2 * di, s.x.data.data());
    std::copy(p + 2 * di, p + 2 * di + gn, s.B.data.data());
    std::copy(p + 2 * di + gn, p + 2 * di + 2 * gn, s.C.data.data());
    std::copy(p + 2 * di + 2 * gn, p + 2 * di + 2 * gn + cfg.n_heads, s.dt_raw.data.data());
    return s;
}

}  // namespace

Tensor decode_step(const ModelWeights& w, const MambaConfig& cfg, DecodeState& state, int64_t token,
                   const HadamardPlan* online_pre_outproj) {
    if (token < 0 || token >= cfg.vocab_size)
        throw Error("token id " + std::to_string(token) + " out of vocab " + std::to_string(cfg.vocab_size));
    const int64_t di = cfg.d_inner();

    Tensor u({cfg.d_model});
    std::copy(w.embedding.data.begin() + token * cfg.d_model, w.embedding.data.begin() + (token + 1) * cfg.d_model,
              u.data.begin());

    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& L = w.layers[static_cast<size_t>(l)];
        Tensor resid = u;
        Tensor t = rmsnorm(u, L.norm1, cfg.norm_eps);

        Tensor trow({1, cfg.d_model}, std::move(t.data));
        Tensor proj = matmul(trow, L.W_in);
        proj.shape = {cfg.d_in_proj()};
        ProjSplit s = split_in_proj(proj, cfg);

        // depthwise conv over concatenated (x, B, C) channels
        Tensor xbc({cfg.conv_channels()});
        std::copy(s.x.data.begin(), s.x.data.end(), xbc.data.begin());
        std::copy(s.B.data.begin(), s.B.data.end(), xbc.data.begin() + di);
        std::copy(s.C.data.begin(), s.C.data.end(), xbc.data.begin() + di + cfg.n_groups * cfg.d_state);
        Tensor xbc_out = conv1d_step(state.conv[static_cast<size_t>(l)], xbc, L.conv_w, L.conv_b);

        Tensor xc({cfg.n_heads, cfg.head_dim});
        std::copy(xbc_out.data.begin(), xbc_out.data.begin() + di, xc.data.begin());
        Tensor Bc({cfg.n_groups, cfg.d_state});
        std::copy(xbc_out.data.begin() + di, xbc_out.data.begin() + di + cfg.n_groups * cfg.d_state, Bc.data.begin());
        Tensor Cc({cfg.n_groups, cfg.d_state});
        std::copy(xbc_out.data.begin() + di + cfg.n_groups * cfg.d_state, xbc_out.data.end(), Cc.data.begin());

        // delta = softplus(dt_raw + dt_bias); abar = exp(delta * (-exp(A_log)))
        Tensor delta({cfg.n_heads}), abar({cfg.n_heads});
        for (int64_t hh = 0; hh < cfg.n_heads; ++hh) {
            const double dt = softplus_scalar(s.dt_raw.data[static_cast<size_t>(hh)] + L.dt_bias.data[static_cast<size_t>(hh)]);
            delta.data[static_cast<size_t>(hh)] = dt;
            abar.data[static_cast<size_t>(hh)] = std::exp(dt * -std::exp(L.A_log.data[static_cast<size_t>(hh)]));
        }

        Tensor y = ssm_step(state.h[static_cast<size_t>(l)], abar, delta, Bc, Cc, xc, L.D, cfg.n_groups);

        // gated norm, then out-projection back to the residual stream
        Tensor gate_in({di});
        for (int64_t i = 0; i < di; ++i)
            gate_in.data[static_cast<size_t>(i)] =
                y.data[static_cast<size_t>(i)] * silu_scalar(s.z.data[static_cast<size_t>(i)]);
        Tensor gated = rmsnorm(gate_in, L.norm2, cfg.norm_eps);
        if (online_pre_outproj) gated = apply_rotation(gated, *online_pre_outproj);

        Tensor grow({1, di}, std::move(gated.data));
        Tensor out = matmul(grow, L.W_out);
        for (int64_t i = 0; i < cfg.d_model; ++i)
            u.data[static_cast<size_t>(i)] = resid.data[static_cast<size_t>(i)] + out.data[static_cast<size_t>(i)];
    }

    Tensor fin = rmsnorm(u, w.final_norm, cfg.norm_eps);
    Tensor frow({1, cfg.d_model}, std::move(fin.data));
    Tensor logits = matmul(frow, w.lm_head);
    logits.shape = {cfg.vocab_size};
    return logits;
}

double nll_from_logits(const Tensor& logits, int64_t target) {
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits.data) z += std::exp(v - mx);
    return -(logits.data[static_cast<size_t>(target)] - mx - std::log(z));
}

int64_t argmax(const Tensor& logits) {
    int64_t best = 0;
    for (int64_t i = 1; i < logits.numel(); ++i)
        if (logits.data[static_cast<size_t>(i)] > logits.data[static_cast<size_t>(best)]) best = i;
    return best;
}

double perplexity(const ModelWeights& w, const MambaConfig& cfg, const std::vector<int64_t>& tokens,
                  const HadamardPlan* online_pre_outproj) {
    if (tokens.size() < 2) throw Error("perplexity needs at least 2 tokens");
    DecodeState st = DecodeState::init(cfg);
    double nll = 0.0;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        Tensor logits = decode_step(w, cfg, st, tokens[i], online_pre_outproj);
        nll += nll_from_logits(logits, tokens[i + 1]);
    }
    return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

void save_model_dir(const std::string& dir, const MambaConfig& cfg, const ModelWeights& w) {
    w.validate(cfg);
    std::filesystem::create_directories(dir);
    cfg.save(dir + "/config.json");
    ContainerWriter cw;
    cw.add_f32("embedding", w.embedding);
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const auto& L = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        cw.add_f32(p + "norm1", L.norm1);
        cw.add_f32(p + "W_in", L.W_in);
        cw.add_f32(p + "conv_w", L.conv_w);
        cw.add_f32(p + "conv_b", L.conv_b);
        cw.add_f32(p + "A_log", L.A_log);
        cw.add_f32(p + "dt_bias", L.dt_bias);
        cw.add_f32(p + "D", L.D);
        cw.add_f32(p + "norm2", L.norm2);
        cw.add_f32(p + "W_out", L.W_out);
    }
    cw.add_f32("final_norm", w.final_norm);
    cw.add_f32("lm_head", w.lm_head);
    cw.write(dir + "/weights.mqw");
}

ModelWeights load_model_weights(const std::string& container_path, const MambaConfig& cfg) {
    ContainerReader r(container_path);
    ModelWeights w;
    w.embedding = r.read_f32("embedding");
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerWeights L;
        L.norm1 = r.read_f32(p + "norm1");
        L.W_in = r.read_f32(p + "W_in");
        L.conv_w = r.read_f32(p + "conv_w");
        L.conv_b = r.read_f32(p + "conv_b");
        L.A_log = r.read_f32(p + "A_log");
        L.dt_bias = r.read_f32(p + "dt_bias");
        L.D = r.read_f32(p + "D");
        L.norm2 = r.read_f32(p + "norm2");
        L.W_out = r.read_f32(p + "W_out");
        w.layers.push_back(std::move(L));
    }
    w.final_norm = r.read_f32("final_norm");
    w.lm_head = r.read_f32("lm_head");
    w.validate(cfg);
    if (!w.embedding.all_finite()) throw Error("embedding has non-finite entries");
    return w;
}

bool is_quantized_model_dir(const std::string& dir) {
    return std::filesystem::exists(dir + "/quant.json");
}

std::vector<int64_t> load_corpus(const std::string& path, int64_t vocab_size) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open corpus " + path);
    std::vector<int64_t> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        // trim whitespace; skip blank lines
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        const std::string tok = line.substr(b, e - b + 1);
        int64_t id;
        try {
            size_t used = 0;
            id = std::stoll(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw Error("corpus line " + std::to_string(lineno) + ": not an integer: '" + tok + "'");
        }
        if (id < 0 || id >= vocab_size)
            throw Error("corpus line " + std::to_string(lineno) + ": token " + std::to_string(id) +
                        " outside vocab [0," + std::to_string(vocab_size) + ")");
        out.push_back(id);
    }
    if (out.empty()) throw Error("corpus " + path + " is empty");
    return out;
}

}  // namespace mambaq
