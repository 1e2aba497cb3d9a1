#include "mambaq/quant.hpp"

#include <cmath>
#include <cstring>

namespace mambaq {

const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::per_tensor: return "per_tensor";
        case Granularity::per_channel: return "per_channel";
        case Granularity::per_token: return "per_token";
        case Granularity::per_group: return "per_group";
    }
    return "?";
}

Granularity granularity_from_name(const std::string& s) {
    if (s == "per_tensor") return Granularity::per_tensor;
    if (s == "per_channel") return Granularity::per_channel;
    if (s == "per_token") return Granularity::per_token;
    if (s == "per_group") return Granularity::per_group;
    throw ConfigError("unknown granularity '" + s + "'");
}

const char* scale_kind_name(ScaleKind k) { return k == ScaleKind::fp ? "float" : "pot"; }

ScaleKind scale_kind_from_name(const std::string& s) {
    if (s == "float") return ScaleKind::fp;
    if (s == "pot") return ScaleKind::pot;
    throw ConfigError("unknown scale kind '" + s + "'");
}

void QuantScheme::validate() const {
    if (bits != 4 && bits != 8) throw UnsupportedError("quantization bits must be 4 or 8, got " + std::to_string(bits));
    if (granularity == Granularity::per_group && group_size < 1)
        throw ConfigError("per_group needs group_size >= 1");
}

ScaleGrid scale_grid(const std::vector<int64_t>& shape, const QuantScheme& scheme) {
    if (shape.size() < 1 || shape.size() > 2)
        throw DimError("quantization expects rank 1 or 2, got " + shape_str(shape));
    ScaleGrid g;
    g.rows = shape.size() == 2 ? shape[0] : 1;
    g.cols = shape.size() == 2 ? shape[1] : shape[0];
    switch (scheme.granularity) {
        case Granularity::per_tensor:
            g.row_block = g.rows;
            g.col_block = g.cols;
            break;
        case Granularity::per_token:
            g.row_block = 1;
            g.col_block = g.cols;
            break;
        case Granularity::per_channel:
            g.row_block = g.rows;
            g.col_block = 1;
            break;
        case Granularity::per_group: {
            if (scheme.group_axis == GroupAxis::cols) {
                g.row_block = 1;
                g.col_block = std::min(scheme.group_size, g.cols);
            } else {
                g.row_block = std::min(scheme.group_size, g.rows);
                g.col_block = 1;
            }
            break;
        }
    }
    g.row_block = std::max<int64_t>(1, g.row_block);
    g.col_block = std::max<int64_t>(1, g.col_block);
    g.row_groups = (g.rows + g.row_block - 1) / g.row_block;
    g.col_groups = (g.cols + g.col_block - 1) / g.col_block;
    return g;
}

int64_t round_half_away(double v) {
    // std::round rounds halfway cases away from zero, which is the contract
    return static_cast<int64_t>(std::llround(v));
}

int pot_exponent(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ScaleOverflowError("pot_exponent: scale must be positive and finite");
    const double l = std::log2(scale);
    // round to nearest, ties toward +inf
    return static_cast<int>(std::floor(l + 0.5));
}

namespace {

double group_scale(const Tensor& x, const ScaleGrid& g, const QuantScheme& scheme, int64_t rg, int64_t cg) {
    const int64_t r0 = rg * g.row_block, r1 = std::min(g.rows, r0 + g.row_block);
    const int64_t c0 = cg * g.col_block, c1 = std::min(g.cols, c0 + g.col_block);
    double m = 0.0;
    for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c) m = std::max(m, std::fabs(x.data[static_cast<size_t>(r * g.cols + c)]));
    if (m == 0.0) return 1.0;
    return m / static_cast<double>(scheme.qmax());
}

}  // namespace

Tensor compute_scales(const Tensor& x, const QuantScheme& scheme) {
    scheme.validate();
    if (!x.all_finite()) throw Error("compute_scales: non-finite input");
    const ScaleGrid g = scale_grid(x.shape, scheme);
    Tensor s({g.row_groups, g.col_groups});
    for (int64_t rg = 0; rg < g.row_groups; ++rg)
        for (int64_t cg = 0; cg < g.col_groups; ++cg) {
            double v = group_scale(x, g, scheme, rg, cg);
            if (scheme.scale_kind == ScaleKind::pot) v = std::ldexp(1.0, pot_exponent(v));
            s.at(rg, cg) = v;
        }
    return s;
}

QuantizedTensor quantize_rtn(const Tensor& x, const QuantScheme& scheme) {
    scheme.validate();
    if (!x.all_finite()) throw Error("quantize_rtn: non-finite input");
    QuantizedTensor q;
    q.shape = x.shape;
    q.scheme = scheme;
    q.grid = scale_grid(x.shape, scheme);

    const int64_t ngroups = q.grid.count();
    std::vector<double> scales(static_cast<size_t>(ngroups));
    for (int64_t rg = 0; rg < q.grid.row_groups; ++rg)
        for (int64_t cg = 0; cg < q.grid.col_groups; ++cg) {
            double v = group_scale(x, q.grid, scheme, rg, cg);
            if (scheme.scale_kind == ScaleKind::pot) {
                const int e = pot_exponent(v);
                if (e < -32 || e > 32) throw ScaleOverflowError("pot exponent " + std::to_string(e) + " out of [-32,32]");
                q.exponents.push_back(static_cast<int8_t>(e));
                v = std::ldexp(1.0, e);
            }
            scales[static_cast<size_t>(rg * q.grid.col_groups + cg)] = v;
        }
    if (scheme.scale_kind == ScaleKind::fp) q.scales = scales;

    const int64_t n = x.numel();
    std::vector<int8_t> codes(static_cast<size_t>(n));
    const int64_t qmin = scheme.qmin(), qmax = scheme.qmax();
    for (int64_t r = 0; r < q.grid.rows; ++r) {
        for (int64_t c = 0; c < q.grid.cols; ++c) {
            const int64_t i = r * q.grid.cols + c;
            const double s = scales[static_cast<size_t>(q.grid.index(r, c))];
            int64_t v = round_half_away(x.data[static_cast<size_t>(i)] / s);
            v = std::min(qmax, std::max(qmin, v));
            codes[static_cast<size_t>(i)] = static_cast<int8_t>(v);
        }
    }
    if (scheme.bits == 4) {
        q.payload = pack_int4(codes);
    } else {
        q.payload.resize(codes.size());
        std::memcpy(q.payload.data(), codes.data(), codes.size());
    }
    return q;
}

int QuantizedTensor::code(int64_t i) const {
    if (scheme.bits == 4) {
        const uint8_t b = payload[static_cast<size_t>(i >> 1)];
        const uint8_t nib = (i & 1) ? (b >> 4) : (b & 0xF);
        return static_cast<int>(static_cast<int8_t>(nib << 4)) >> 4;  // sign extend
    }
    return static_cast<int8_t>(payload[static_cast<size_t>(i)]);
}

std::vector<int8_t> QuantizedTensor::unpack_codes() const {
    if (scheme.bits == 4) return unpack_int4(payload, numel());
    std::vector<int8_t> out(payload.size());
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
}

double QuantizedTensor::scale_by_group(int64_t g) const {
    if (scheme.scale_kind == ScaleKind::pot) return std::ldexp(1.0, exponents[static_cast<size_t>(g)]);
    return scales[static_cast<size_t>(g)];
}

double QuantizedTensor::scale_at(int64_t r, int64_t c) const { return scale_by_group(grid.index(r, c)); }

Tensor dequantize(const QuantizedTensor& q) {
    Tensor out(q.shape);
    for (int64_t r = 0; r < q.grid.rows; ++r)
        for (int64_t c = 0; c < q.grid.cols; ++c) {
            const int64_t i = r * q.grid.cols + c;
            out.data[static_cast<size_t>(i)] = q.code(i) * q.scale_at(r, c);
        }
    return out;
}

QuantError quant_error(const Tensor& x, const Tensor& xhat) {
    if (!x.same_shape(xhat)) throw DimError("quant_error: shape mismatch");
    QuantError e;
    double dot = 0.0, nx = 0.0, nh = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double d = x.data[i] - xhat.data[i];
        e.mse += d * d;
        e.max_abs = std::max(e.max_abs, std::fabs(d));
        dot += x.data[i] * xhat.data[i];
        nx += x.data[i] * x.data[i];
        nh += xhat.data[i] * xhat.data[i];
    }
    e.mse /= static_cast<double>(x.data.size());
    e.cosine = (nx == 0.0 || nh == 0.0) ? 1.0 : dot / std::sqrt(nx * nh);
    return e;
}

QuantError quant_error(const Tensor& x, const QuantizedTensor& q) { return quant_error(x, dequantize(q)); }

int32_t requantize_shift(int64_t acc, int shift, int out_bits) {
    if (out_bits < 2 || out_bits > 32) throw UnsupportedError("requantize_shift: out_bits must be in [2,32]");
    if (shift < -62 || shift > 62) throw ScaleOverflowError("requantize_shift: shift " + std::to_string(shift));
    int64_t v;
    if (shift > 0) {
        const int64_t mag = acc < 0 ? -acc : acc;
        const int64_t r = (mag + (int64_t{1} << (shift - 1))) >> shift;
        v = acc < 0 ? -r : r;
    } else {
        const int ls = -shift;
        if (ls > 0 && (acc > (int64_t{1} << 62) / (int64_t{1} << ls) || acc < -((int64_t{1} << 62) / (int64_t{1} << ls))))
            throw AccumOverflowError("requantize_shift: left shift overflow");
        v = acc << ls;
    }
    const int64_t lo = -(int64_t{1} << (out_bits - 1));
    const int64_t hi = (int64_t{1} << (out_bits - 1)) - 1;
    v = std::min(hi, std::max(lo, v));
    return static_cast<int32_t>(v);
}

std::vector<uint8_t> pack_int4(const std::vector<int8_t>& codes) {
    std::vector<uint8_t> out((codes.size() + 1) / 2, 0);
    for (size_t i = 0; i < codes.size(); ++i) {
        const uint8_t nib = static_cast<uint8_t>(codes[i]) & 0xF;
        if (i & 1)
            out[i >> 1] |= static_cast<uint8_t>(nib << 4);
        else
            out[i >> 1] |= nib;
    }
    return out;
}

std::vector<int8_t> unpack_int4(const std::vector<uint8_t>& bytes, int64_t n) {
    if (static_cast<size_t>((n + 1) / 2) > bytes.size()) throw DimError("unpack_int4: byte buffer too small");
    std::vector<int8_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t b = bytes[static_cast<size_t>(i >> 1)];
        const uint8_t nib = (i & 1) ? (b >> 4) : (b & 0xF);
        out[static_cast<size_t>(i)] = static_cast<int8_t>(static_cast<int8_t>(nib << 4) >> 4);
    }
    return out;
}

}  // namespace mambaq
