#pragma once

#include <cmath>
#include <cstdint>

#include "dyno/tensor.hpp"

namespace dyno::ops {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    Tensor::shape_str(a.shape()) + " vs " +
                                    Tensor::shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

/// out = a + s * b
inline Tensor axpy(const Tensor& a, const Tensor& b, double s) {
    check_same_shape(a, b, "axpy");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + s * b[i];
    return out;
}

inline Tensor tanh_map(const Tensor& a) {
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
    return out;
}

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    Tensor::shape_str(a.shape()) + " x " +
                                    Tensor::shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        double* orow = po + static_cast<std::int64_t>(i) * n;
        const double* arow = pa + static_cast<std::int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = pb + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

/// A^T x B without materializing the transpose: [k,m]^T from a [m,k]... here a:[m,k], b:[m,n] -> [k,n]
inline Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("matmul_at_b: incompatible shapes");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({k, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data() + static_cast<std::int64_t>(i) * k;
        const double* brow = b.data() + static_cast<std::int64_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double* orow = out.data() + static_cast<std::int64_t>(kk) * n;
            const double av = arow[kk];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

/// a:[m,k], b:[n,k] -> a x b^T : [m,n]
inline Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_a_bt: incompatible shapes");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data() + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = b.data() + static_cast<std::int64_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            out[static_cast<std::int64_t>(i) * n + j] = acc;
        }
    }
    return out;
}

/// Add row vector v[n] to every row of m:[r,n].
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.size() != m.dim(1))
        throw std::invalid_argument("add_rowvec: shape mismatch");
    Tensor out(m.shape());
    const int r = m.dim(0), n = m.dim(1);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::int64_t>(i) * n + j] = m[static_cast<std::int64_t>(i) * n + j] + v[j];
    return out;
}

/// Tile vector v[n] into [rows, n].
inline Tensor broadcast_row(const Tensor& v, int rows) {
    const int n = static_cast<int>(v.size());
    Tensor out({rows, n});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::int64_t>(i) * n + j] = v[j];
    return out;
}

/// Column mean over rows: [r,n] -> [n].
inline Tensor mean_rows(const Tensor& m) {
    if (m.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 input required");
    const int r = m.dim(0), n = m.dim(1);
    Tensor out({n});
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < r; ++i) acc += m[static_cast<std::int64_t>(i) * n + j];
        out[j] = acc / r;
    }
    return out;
}

/// Horizontal concat of rank-2 tensors with equal row counts.
inline Tensor concat_cols(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int r = parts[0]->dim(0);
    int n = 0;
    for (const Tensor* p : parts) {
        if (p->rank() != 2 || p->dim(0) != r)
            throw std::invalid_argument("concat_cols: row count mismatch");
        n += p->dim(1);
    }
    Tensor out({r, n});
    int col = 0;
    for (const Tensor* p : parts) {
        const int pn = p->dim(1);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pn; ++j)
                out[static_cast<std::int64_t>(i) * n + col + j] = (*p)[static_cast<std::int64_t>(i) * pn + j];
        col += pn;
    }
    return out;
}

inline double sum(const Tensor& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i];
    return acc;
}

inline double sum_sq(const Tensor& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
    return acc;
}

inline double mean_abs(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean_abs: empty tensor");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += std::abs(a[i]);
    return acc / static_cast<double>(a.size());
}

inline double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(sum_sq(a)); }

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

inline bool all_finite(const Tensor& a) {
    for (std::int64_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

}  // namespace dyno::ops
