#pragma once

#include <cstdint>

#include "mambaq/tensor.hpp"

namespace mambaq {

// Largest Sylvester construction we materialize as a dense matrix (2^12 is
// already 128 MB of doubles; anything bigger should go through fwht).
inline constexpr int kMaxSylvesterK = 12;

// +-1 matrix of order 2^k via Sylvester doubling.
Tensor sylvester(int k);

// +-1 Hadamard matrix of non-power-of-two order. Supported: 12 and 20 (Paley
// construction I over GF(11)/GF(19)) and any repeated doubling of those
// (24, 40, 48, 80, ...).
Tensor hadamard_nonpot(int64_t m);

// In-place unnormalized fast Walsh-Hadamard transform; n must be a power of two.
void fwht(std::vector<double>& v);
void fwht(double* v, int64_t n);

bool is_pow2(int64_t n);
int log2_exact(int64_t n);

// Factorized rotation H = (H_pot (x) H_small) / sqrt(n). pot_size is a power
// of two handled by fwht; small_size is a dense +-1 Hadamard factor (1 for a
// pure fwht plan).
struct HadamardPlan {
    int64_t n_total = 0;
    int64_t pot_size = 0;
    int64_t small_size = 1;
    Tensor small_matrix;  // [small_size x small_size], empty when small_size == 1
    bool normalize = true;

    bool pure_pot() const { return small_size == 1; }
};

// Picks the factorization for n. Power-of-two n maps to a pure fwht plan; an
// odd factor of 5 maps to the 20-point base, doubled until the pot factor
// fits a 128-point transform (5120 -> 128 x 40). Any other odd factor has no
// supported Hadamard order and raises UnsupportedError.
HadamardPlan make_plan(int64_t n);

// Applies the plan to each row of x (any rank; last dim must equal n_total).
// transpose applies the transposed rotation (the inverse, since the rotation
// is orthonormal when normalized).
Tensor apply_rotation(const Tensor& x, const HadamardPlan& plan, bool transpose = false);

// Dense n x n matrix of the (normalized) plan, for small-n oracles.
Tensor plan_matrix(const HadamardPlan& plan);

}  // namespace mambaq
