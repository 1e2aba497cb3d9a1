#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mambaq/error.hpp"

namespace mambaq {

// Dense row-major tensor of doubles. Compute stays in 64-bit reals; narrower
// types only appear at serialization and in the quantized integer paths.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::string name;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::string n = "");
    Tensor(std::vector<int64_t> s, std::vector<double> d, std::string n = "");

    static Tensor zeros(std::vector<int64_t> s, std::string n = "");
    static Tensor full(std::vector<int64_t> s, double v, std::string n = "");

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const;

    // 2-d accessors (most weights are matrices)
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;
    int64_t rows() const { return dim(0); }
    int64_t cols() const { return dim(1); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void require_rank(int r, const char* what) const;
    void require_shape(const std::vector<int64_t>& s, const char* what) const;
    bool all_finite() const;
};

int64_t numel_of(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// a: [M x K], b: [K x N] -> [M x N]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

double silu_scalar(double x);
double softplus_scalar(double x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

// x / sqrt(mean(x^2) + eps) * weight over the last dim; 1-d or 2-d input.
Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps);

// One decode-time step of a depthwise causal conv. state holds the last k-1
// inputs per channel, oldest first. Returns silu(conv) and advances state.
// kernel: [D x k], state: [D x (k-1)], x_new/bias/out: [D].
Tensor conv1d_step(Tensor& state, const Tensor& x_new, const Tensor& kernel, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);

}  // namespace mambaq
