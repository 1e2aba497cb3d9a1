#pragma once

#include <cstdint>
#include <string>

#include "mambaq/hadamard.hpp"
#include "mambaq/model.hpp"

namespace mambaq {

// Rotation sites. All but pre_outproj fold into weights offline; pre_outproj
// must run online because the selective-scan recurrence does not commute with
// an orthogonal mix of the state dimension.
struct RotationSites {
    bool embedding = true;      // E -> E * Q
    bool inproj = true;         // W_in -> Q^T diag(norm1) W_in, norm1 -> 1
    bool pre_outproj = true;    // online H on the out-projection input
    bool outproj = true;        // W_out -> H^T W_out Q
    bool lm_head = true;        // head -> Q^T diag(final_norm) head, final_norm -> 1
};

struct RotationOptions {
    RotationSites sites;
    // folds norm2 into W_out as H^T diag(norm2) W_out Q. Invariance still
    // holds in FP, but the fused weight quantizes worse; off by default.
    bool fuse_second_norm_scale = false;
};

struct RotationRecipe {
    bool active = false;
    RotationSites sites;
    bool fuse_second_norm_scale = false;
    int64_t residual_n = 0, residual_pot = 0, residual_small = 0;
    int64_t inner_n = 0, inner_pot = 0, inner_small = 0;

    std::string to_json() const;
    static RotationRecipe from_json(const std::string& text);
};

struct RotatedModel {
    ModelWeights weights;
    RotationRecipe recipe;
    HadamardPlan residual_plan;  // Q over d_model
    HadamardPlan inner_plan;     // H over d_inner
};

HadamardPlan plan_from_dims(int64_t n, int64_t pot, int64_t small);

// Applies the offline sites to a copy of the weights and records the recipe.
// Raises UnsupportedError when d_model or d_inner has no Hadamard plan.
RotatedModel build_rotated_model(const ModelWeights& w, const MambaConfig& cfg, const RotationOptions& opts = {});

// Runs both models on the same random token stream and returns the max
// absolute logit difference (plus greedy-token agreement).
struct InvarianceReport {
    double max_logit_diff = 0.0;
    bool greedy_match = true;
    int64_t tokens = 0;
};
InvarianceReport verify_invariance(const ModelWeights& fp, const MambaConfig& cfg, const RotatedModel& rot,
                                   int64_t n_tokens, uint64_t seed);

// The inequality that forces the online site: with elementwise decay a,
// (a (.) h + bx) H != a (.) (h H) + (bx H) unless a is constant.
struct SsmRotationCheck {
    Tensor lhs, rhs;
    double max_diff = 0.0;
    bool equal = false;
};
SsmRotationCheck ssm_rotation_counterexample(const Tensor& a, const Tensor& h, const Tensor& bx,
                                             const HadamardPlan& plan, double tol = 1e-9);

// Excess kurtosis of a tensor's entries (outlier heaviness).
double kurtosis(const Tensor& x);

}  // namespace mambaq
