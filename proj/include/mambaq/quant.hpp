#pragma once

#include <cstdint>
#include <vector>

#include "mambaq/tensor.hpp"

namespace mambaq {

enum class Granularity { per_tensor, per_channel, per_token, per_group };
enum class ScaleKind { fp, pot };
enum class GroupAxis { rows, cols };

const char* granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& s);
const char* scale_kind_name(ScaleKind k);
ScaleKind scale_kind_from_name(const std::string& s);

// Symmetric round-to-nearest scheme. The scale grid over a [R x C] tensor is
// (row groups x col groups):
//   per_tensor  -> (1, 1)
//   per_token   -> (R, 1)      one scale per row (activations)
//   per_channel -> (1, C)      one scale per column (weight output channels)
//   per_group   -> group_size-wide blocks along group_axis, the other axis
//                  fully split: cols -> (R, ceil(C/G)), rows -> (ceil(R/G), C)
// 1-d tensors are treated as a single row.
struct QuantScheme {
    int bits = 8;  // 4 or 8
    Granularity granularity = Granularity::per_tensor;
    int64_t group_size = 128;
    ScaleKind scale_kind = ScaleKind::fp;
    GroupAxis group_axis = GroupAxis::cols;

    void validate() const;
    int64_t qmax() const { return (int64_t{1} << (bits - 1)) - 1; }
    int64_t qmin() const { return -(int64_t{1} << (bits - 1)); }
};

// Scale grid geometry for a shape under a scheme.
struct ScaleGrid {
    int64_t rows = 1, cols = 1;          // tensor dims (rank<=2)
    int64_t row_groups = 1, col_groups = 1;
    int64_t row_block = 1, col_block = 1;  // elements covered per group along each axis

    int64_t count() const { return row_groups * col_groups; }
    int64_t index(int64_t r, int64_t c) const { return (r / row_block) * col_groups + (c / col_block); }
};

ScaleGrid scale_grid(const std::vector<int64_t>& shape, const QuantScheme& scheme);

struct QuantizedTensor {
    std::vector<int64_t> shape;
    QuantScheme scheme;
    // 8-bit: one int8 per element; 4-bit: two codes per byte, low nibble first
    std::vector<uint8_t> payload;
    // float-scale grid values (scale_kind == fp) or empty
    std::vector<double> scales;
    // power-of-two exponents (scale_kind == pot) or empty; scale = 2^e
    std::vector<int8_t> exponents;
    ScaleGrid grid;

    int64_t numel() const { return numel_of(shape); }
    int code(int64_t flat_index) const;
    std::vector<int8_t> unpack_codes() const;
    double scale_at(int64_t r, int64_t c) const;
    double scale_by_group(int64_t g) const;
};

// q = clamp(round_half_away(x / scale), -2^(b-1), 2^(b-1)-1);
// scale = max|group| / (2^(b-1)-1), 1.0 for an all-zero group. pot schemes
// snap each scale to 2^round(log2(scale)).
QuantizedTensor quantize_rtn(const Tensor& x, const QuantScheme& scheme);
Tensor compute_scales(const Tensor& x, const QuantScheme& scheme);  // grid as [row_groups x col_groups]
Tensor dequantize(const QuantizedTensor& q);

struct QuantError {
    double mse = 0.0;
    double max_abs = 0.0;
    double cosine = 1.0;
};
QuantError quant_error(const Tensor& x, const QuantizedTensor& q);
QuantError quant_error(const Tensor& x, const Tensor& xhat);

int64_t round_half_away(double v);

// Nearest power-of-two exponent for a positive scale; ties round up, so
// 2^e / scale always lands within a factor sqrt(2) of 1.
int pot_exponent(double scale);

// Shift-only requantization of an integer accumulator by 2^-k with
// round-half-away-from-zero, clamped to a signed out_bits range. k <= 0
// shifts left. No multiplies, by construction.
int32_t requantize_shift(int64_t acc, int shift, int out_bits);

// 4-bit packing: two signed codes per byte, low nibble first; odd tails pad
// with a zero nibble. unpack sign-extends.
std::vector<uint8_t> pack_int4(const std::vector<int8_t>& codes);
std::vector<int8_t> unpack_int4(const std::vector<uint8_t>& bytes, int64_t n);

}  // namespace mambaq
