#include "mambaq/hadamard.hpp"

#include <cmath>

namespace mambaq {

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

int log2_exact(int64_t n) {
    if (!is_pow2(n)) throw DimError("not a power of two: " + std::to_string(n));
    int k = 0;
    while ((int64_t{1} << k) < n) ++k;
    return k;
}

Tensor sylvester(int k) {
    if (k < 0) throw DimError("sylvester: negative order");
    if (k > kMaxSylvesterK)
        throw CapacityError("sylvester: 2^" + std::to_string(k) + " exceeds dense limit 2^" +
                            std::to_string(kMaxSylvesterK));
    const int64_t n = int64_t{1} << k;
    Tensor h({n, n});
    h.data[0] = 1.0;
    for (int64_t m = 1; m < n; m <<= 1) {
        // [[H, H], [H, -H]] doubling in place
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < m; ++j) {
                const double v = h.data[static_cast<size_t>(i * n + j)];
                h.data[static_cast<size_t>(i * n + j + m)] = v;
                h.data[static_cast<size_t>((i + m) * n + j)] = v;
                h.data[static_cast<size_t>((i + m) * n + j + m)] = -v;
            }
        }
    }
    return h;
}

namespace {

// Paley construction I for prime q = 3 (mod 4): H = I + S of order q+1, where
// S embeds the Jacobsthal matrix chi(i-j).
Tensor paley1(int64_t q) {
    const int64_t n = q + 1;
    std::vector<int> chi(static_cast<size_t>(q), -1);
    chi[0] = 0;
    for (int64_t r = 1; r < q; ++r) chi[static_cast<size_t>((r * r) % q)] = 1;

    Tensor h({n, n});
    h.at(0, 0) = 1.0;
    for (int64_t j = 1; j < n; ++j) {
        h.at(0, j) = 1.0;
        h.at(j, 0) = -1.0;
    }
    for (int64_t i = 1; i < n; ++i) {
        for (int64_t j = 1; j < n; ++j) {
            if (i == j) {
                h.at(i, j) = 1.0;
            } else {
                const int64_t d = ((i - j) % q + q) % q;
                h.at(i, j) = static_cast<double>(chi[static_cast<size_t>(d)]);
            }
        }
    }
    return h;
}

Tensor double_order(const Tensor& h) {
    const int64_t m = h.rows();
    Tensor out({2 * m, 2 * m});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            const double v = h.at(i, j);
            out.at(i, j) = v;
            out.at(i, j + m) = v;
            out.at(i + m, j) = v;
            out.at(i + m, j + m) = -v;
        }
    }
    return out;
}

}  // namespace

Tensor hadamard_nonpot(int64_t m) {
    if (m == 12) return paley1(11);
    if (m == 20) return paley1(19);
    if (m > 20 && m % 2 == 0) return double_order(hadamard_nonpot(m / 2));
    throw UnsupportedError("no Hadamard construction for order " + std::to_string(m));
}

void fwht(double* v, int64_t n) {
    if (!is_pow2(n)) throw DimError("fwht: length " + std::to_string(n) + " is not a power of two");
    for (int64_t h = 1; h < n; h <<= 1) {
        for (int64_t i = 0; i < n; i += h << 1) {
            for (int64_t j = i; j < i + h; ++j) {
                const double a = v[j];
                const double b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
    }
}

void fwht(std::vector<double>& v) { fwht(v.data(), static_cast<int64_t>(v.size())); }

HadamardPlan make_plan(int64_t n) {
    if (n < 1) throw DimError("make_plan: n must be positive");
    int64_t pot = 1, odd = n;
    while (odd % 2 == 0) {
        odd /= 2;
        pot *= 2;
    }
    HadamardPlan plan;
    plan.n_total = n;
    if (odd == 1) {
        plan.pot_size = n;
        plan.small_size = 1;
        return plan;
    }
    if (odd != 5)
        throw UnsupportedError("rotation plan: " + std::to_string(n) + " = 2^k * " + std::to_string(odd) +
                               " has no supported Hadamard factor (" + std::to_string(odd) + " unsupported)");
    // base order 20 = 4 * 5, so n must carry at least 2^2
    if (n % 20 != 0)
        throw UnsupportedError("rotation plan: " + std::to_string(n) + " is not a multiple of 20");
    int64_t small = 20;
    int64_t pot_part = n / small;
    // keep the streaming transform within a 128-point unit by growing the
    // dense factor instead
    while (pot_part > 128) {
        small *= 2;
        pot_part /= 2;
    }
    plan.pot_size = pot_part;
    plan.small_size = small;
    plan.small_matrix = hadamard_nonpot(small);
    return plan;
}

namespace {

// One row of length n = pot * m viewed as [pot x m]: fwht down the pot axis,
// dense +-1 product along the m axis. Order of the two passes is irrelevant
// (they act on different indices).
void apply_plan_row(double* row, const HadamardPlan& plan, bool transpose, std::vector<double>& scratch) {
    const int64_t pot = plan.pot_size;
    const int64_t m = plan.small_size;
    if (m == 1) {
        fwht(row, pot);
    } else {
        // columns: stride-m views of length pot
        std::vector<double>& col = scratch;
        col.resize(static_cast<size_t>(pot));
        for (int64_t b = 0; b < m; ++b) {
            for (int64_t a = 0; a < pot; ++a) col[static_cast<size_t>(a)] = row[a * m + b];
            fwht(col.data(), pot);
            for (int64_t a = 0; a < pot; ++a) row[a * m + b] = col[static_cast<size_t>(a)];
        }
        // rows: out = in * H_small (or H_small^T)
        const Tensor& hs = plan.small_matrix;
        std::vector<double> tmp(static_cast<size_t>(m));
        for (int64_t a = 0; a < pot; ++a) {
            double* seg = row + a * m;
            for (int64_t d = 0; d < m; ++d) {
                double acc = 0.0;
                for (int64_t b = 0; b < m; ++b)
                    acc += seg[b] * (transpose ? hs.at(d, b) : hs.at(b, d));
                tmp[static_cast<size_t>(d)] = acc;
            }
            for (int64_t d = 0; d < m; ++d) seg[d] = tmp[static_cast<size_t>(d)];
        }
    }
    if (plan.normalize) {
        const double s = 1.0 / std::sqrt(static_cast<double>(plan.n_total));
        for (int64_t i = 0; i < plan.n_total; ++i) row[i] *= s;
    }
}

}  // namespace

Tensor apply_rotation(const Tensor& x, const HadamardPlan& plan, bool transpose) {
    if (x.rank() < 1) throw DimError("apply_rotation: scalar input");
    const int64_t n = x.shape.back();
    if (n != plan.n_total)
        throw DimError("apply_rotation: last dim " + std::to_string(n) + " vs plan " + std::to_string(plan.n_total));
    if (plan.pot_size * plan.small_size != plan.n_total)
        throw DimError("apply_rotation: inconsistent plan");
    Tensor out = x;
    const int64_t nrows = x.numel() / n;
    std::vector<double> scratch;
    for (int64_t r = 0; r < nrows; ++r) apply_plan_row(&out.data[static_cast<size_t>(r * n)], plan, transpose, scratch);
    return out;
}

Tensor plan_matrix(const HadamardPlan& plan) {
    const int64_t n = plan.n_total;
    if (n > 8192) throw CapacityError("plan_matrix: order too large to materialize");
    Tensor id = Tensor::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) id.at(i, i) = 1.0;
    // row i of the result is e_i * M, so the result is M itself under the
    // row-vector convention x -> x * M used everywhere here
    return apply_rotation(id, plan, false);
}

}  // namespace mambaq
