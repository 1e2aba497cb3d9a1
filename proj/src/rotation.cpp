#include "mambaq/rotation.hpp"

#include <cmath>

#include "json.hpp"
#include "mambaq/synth.hpp"

namespace mambaq {

using nlohmann::json;

std::string RotationRecipe::to_json() const {
    json j;
    j["active"] = active;
    j["fuse_second_norm_scale"] = fuse_second_norm_scale;
    j["sites"] = {{"embedding", sites.embedding},
                  {"inproj", sites.inproj},
                  {"pre_outproj", sites.pre_outproj},
                  {"outproj", sites.outproj},
                  {"lm_head", sites.lm_head}};
    j["residual_plan"] = {{"n", residual_n}, {"pot", residual_pot}, {"small", residual_small}};
    j["inner_plan"] = {{"n", inner_n}, {"pot", inner_pot}, {"small", inner_small}};
    return j.dump(2) + "\n";
}

RotationRecipe RotationRecipe::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad rotation recipe: ") + e.what());
    }
    RotationRecipe r;
    r.active = j.at("active").get<bool>();
    r.fuse_second_norm_scale = j.at("fuse_second_norm_scale").get<bool>();
    const json& s = j.at("sites");
    r.sites.embedding = s.at("embedding").get<bool>();
    r.sites.inproj = s.at("inproj").get<bool>();
    r.sites.pre_outproj = s.at("pre_outproj").get<bool>();
    r.sites.outproj = s.at("outproj").get<bool>();
    r.sites.lm_head = s.at("lm_head").get<bool>();
    r.residual_n = j.at("residual_plan").at("n").get<int64_t>();
    r.residual_pot = j.at("residual_plan").at("pot").get<int64_t>();
    r.residual_small = j.at("residual_plan").at("small").get<int64_t>();
    r.inner_n = j.at("inner_plan").at("n").get<int64_t>();
    r.inner_pot = j.at("inner_plan").at("pot").get<int64_t>();
    r.inner_small = j.at("inner_plan").at("small").get<int64_t>();
    return r;
}

HadamardPlan plan_from_dims(int64_t n, int64_t pot, int64_t small) {
    HadamardPlan p = make_plan(n);
    if (p.pot_size != pot || p.small_size != small)
        throw ConfigError("recipe plan (" + std::to_string(pot) + "," + std::to_string(small) +
                          ") does not match derived plan for n=" + std::to_string(n));
    return p;
}

namespace {

// x -> x * M for every row of t
void rotate_rows(Tensor& t, const HadamardPlan& plan, bool transpose = false) {
    t = apply_rotation(t, plan, transpose);
}

// t -> M^T * t: each column is a vector v mapped to M^T v = (v^T M)^T, i.e.
// a forward row rotation of the transposed tensor
void rotate_cols(Tensor& t, const HadamardPlan& plan, bool transpose = false) {
    Tensor tt = mambaq::transpose(t);
    tt = apply_rotation(tt, plan, transpose);
    t = mambaq::transpose(tt);
}

void scale_rows(Tensor& t, const Tensor& d) {
    // t -> diag(d) * t
    for (int64_t r = 0; r < t.rows(); ++r)
        for (int64_t c = 0; c < t.cols(); ++c) t.at(r, c) *= d.data[static_cast<size_t>(r)];
}

}  // namespace

RotatedModel build_rotated_model(const ModelWeights& w, const MambaConfig& cfg, const RotationOptions& opts) {
    cfg.validate();
    w.validate(cfg);
    RotatedModel rm;
    rm.residual_plan = make_plan(cfg.d_model);
    rm.inner_plan = make_plan(cfg.d_inner());
    rm.weights = w;

    RotationRecipe& rec = rm.recipe;
    rec.active = true;
    rec.sites = opts.sites;
    rec.fuse_second_norm_scale = opts.fuse_second_norm_scale;
    rec.residual_n = cfg.d_model;
    rec.residual_pot = rm.residual_plan.pot_size;
    rec.residual_small = rm.residual_plan.small_size;
    rec.inner_n = cfg.d_inner();
    rec.inner_pot = rm.inner_plan.pot_size;
    rec.inner_small = rm.inner_plan.small_size;

    ModelWeights& m = rm.weights;
    if (opts.sites.embedding) rotate_rows(m.embedding, rm.residual_plan);

    for (auto& L : m.layers) {
        if (opts.sites.inproj) {
            // W_in <- Q^T diag(norm1) W_in, norm1 <- 1
            scale_rows(L.W_in, L.norm1);
            rotate_cols(L.W_in, rm.residual_plan);
            L.norm1 = Tensor::full({cfg.d_model}, 1.0);
        }
        if (opts.sites.outproj) {
            // W_out <- H^T [diag(norm2)] W_out Q
            if (opts.fuse_second_norm_scale) {
                scale_rows(L.W_out, L.norm2);
                L.norm2 = Tensor::full({cfg.d_inner()}, 1.0);
            }
            rotate_cols(L.W_out, rm.inner_plan);
            rotate_rows(L.W_out, rm.residual_plan);
        }
    }
    if (opts.sites.lm_head) {
        scale_rows(m.lm_head, m.final_norm);
        rotate_cols(m.lm_head, rm.residual_plan);
        m.final_norm = Tensor::full({cfg.d_model}, 1.0);
    }
    return rm;
}

InvarianceReport verify_invariance(const ModelWeights& fp, const MambaConfig& cfg, const RotatedModel& rot,
                                   int64_t n_tokens, uint64_t seed) {
    InvarianceReport rep;
    rep.tokens = n_tokens;
    std::vector<int64_t> stream = synth_corpus(seed, n_tokens, cfg.vocab_size);
    DecodeState s_fp = DecodeState::init(cfg);
    DecodeState s_rot = DecodeState::init(cfg);
    const HadamardPlan* online = rot.recipe.sites.pre_outproj ? &rot.inner_plan : nullptr;
    for (int64_t i = 0; i < n_tokens; ++i) {
        Tensor a = decode_step(fp, cfg, s_fp, stream[static_cast<size_t>(i)]);
        Tensor b = decode_step(rot.weights, cfg, s_rot, stream[static_cast<size_t>(i)], online);
        rep.max_logit_diff = std::max(rep.max_logit_diff, max_abs_diff(a, b));
        if (argmax(a) != argmax(b)) rep.greedy_match = false;
    }
    return rep;
}

SsmRotationCheck ssm_rotation_counterexample(const Tensor& a, const Tensor& h, const Tensor& bx,
                                             const HadamardPlan& plan, double tol) {
    if (!a.same_shape(h) || !h.same_shape(bx)) throw DimError("counterexample: shapes must match");
    SsmRotationCheck out;
    // lhs: update then rotate
    Tensor upd = h;
    for (size_t i = 0; i < upd.data.size(); ++i) upd.data[i] = a.data[i] * h.data[i] + bx.data[i];
    out.lhs = apply_rotation(upd, plan);
    // rhs: rotate state and input separately, then update elementwise
    Tensor hr = apply_rotation(h, plan);
    Tensor br = apply_rotation(bx, plan);
    out.rhs = hr;
    for (size_t i = 0; i < out.rhs.data.size(); ++i) out.rhs.data[i] = a.data[i] * hr.data[i] + br.data[i];
    out.max_diff = max_abs_diff(out.lhs, out.rhs);
    out.equal = out.max_diff <= tol;
    return out;
}

double kurtosis(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double v : x.data) mean += v;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : x.data) {
        const double d = v - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    if (m2 == 0.0) return 0.0;
    return m4 / (m2 * m2) - 3.0;
}

}  // namespace mambaq
