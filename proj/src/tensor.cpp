#include "mambaq/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mambaq {

int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw DimError("negative dim in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> s, std::string n)
    : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), 0.0), name(std::move(n)) {}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d, std::string n)
    : shape(std::move(s)), data(std::move(d)), name(std::move(n)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
        throw DimError("data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int64_t> s, std::string n) { return Tensor(std::move(s), std::move(n)); }

Tensor Tensor::full(std::vector<int64_t> s, double v, std::string n) {
    Tensor t(std::move(s), std::move(n));
    for (auto& x : t.data) x = v;
    return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int64_t Tensor::dim(int i) const {
    if (i < 0 || i >= rank()) throw DimError("dim index " + std::to_string(i) + " out of rank " + std::to_string(rank()));
    return shape[static_cast<size_t>(i)];
}

double& Tensor::at(int64_t r, int64_t c) {
    return data[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * cols() + c)];
}

void Tensor::require_rank(int r, const char* what) const {
    if (rank() != r)
        throw DimError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + shape_str(shape));
}

void Tensor::require_shape(const std::vector<int64_t>& s, const char* what) const {
    if (shape != s)
        throw DimError(std::string(what) + ": expected " + shape_str(s) + ", got " + shape_str(shape));
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "matmul lhs");
    b.require_rank(2, "matmul rhs");
    if (a.cols() != b.rows())
        throw DimError("matmul: " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i * k)];
        double* orow = &out.data[static_cast<size_t>(i * n)];
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(kk * n)];
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    a.require_rank(2, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (int64_t i = 0; i < a.rows(); ++i)
        for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

double silu_scalar(double x) { return x / (1.0 + std::exp(-x)); }

double softplus_scalar(double x) {
    // log1p(exp(x)) without overflow for large x
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

Tensor silu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = silu_scalar(v);
    return out;
}

Tensor softplus(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = softplus_scalar(v);
    return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps) {
    weight.require_rank(1, "rmsnorm weight");
    const int64_t d = weight.dim(0);
    if (x.rank() != 1 && x.rank() != 2) throw DimError("rmsnorm: input must be rank 1 or 2");
    const int64_t last = x.shape.back();
    if (last != d) throw DimError("rmsnorm: last dim " + std::to_string(last) + " vs weight " + std::to_string(d));
    Tensor out = x;
    const int64_t nrows = x.numel() / d;
    for (int64_t r = 0; r < nrows; ++r) {
        const double* row = &x.data[static_cast<size_t>(r * d)];
        double ss = 0.0;
        for (int64_t i = 0; i < d; ++i) ss += row[i] * row[i];
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        double* orow = &out.data[static_cast<size_t>(r * d)];
        for (int64_t i = 0; i < d; ++i) orow[i] = row[i] * inv * weight.data[static_cast<size_t>(i)];
    }
    return out;
}

Tensor conv1d_step(Tensor& state, const Tensor& x_new, const Tensor& kernel, const Tensor& bias) {
    kernel.require_rank(2, "conv1d_step kernel");
    const int64_t d = kernel.rows();
    const int64_t k = kernel.cols();
    if (k < 1) throw DimError("conv1d_step: kernel width must be >= 1");
    x_new.require_shape({d}, "conv1d_step input");
    bias.require_shape({d}, "conv1d_step bias");
    state.require_shape({d, k - 1}, "conv1d_step state");

    Tensor out({d});
    for (int64_t c = 0; c < d; ++c) {
        double acc = bias.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < k - 1; ++i) acc += state.at(c, i) * kernel.at(c, i);
        acc += x_new.data[static_cast<size_t>(c)] * kernel.at(c, k - 1);
        out.data[static_cast<size_t>(c)] = silu_scalar(acc);
        // slide the window
        for (int64_t i = 0; i + 1 < k - 1; ++i) state.at(c, i) = state.at(c, i + 1);
        if (k > 1) state.at(c, k - 2) = x_new.data[static_cast<size_t>(c)];
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimError("add: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimError("mul: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::fabs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

double l2_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace mambaq
