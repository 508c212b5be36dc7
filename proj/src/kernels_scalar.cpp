#include "specfit/kernels.hpp"

#include <cmath>
#include <cstring>

// Scalar reference kernels. These define the numerical contract; the AVX2
// variants must reproduce them bit for bit. This translation unit is compiled
// with -ffp-contract=off so the compiler cannot fuse mul/add pairs.

namespace specfit::kern {
namespace {

template <class T> constexpr std::size_t lanes() { return 32 / sizeof(T); }

template <class T>
void matmul_impl(const T* a, const T* b, T* y,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* yrow = y + i * n;
        for (std::size_t j = 0; j < n; ++j) yrow[j] = T(0);
        const T* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j)
                yrow[j] = yrow[j] + aik * brow[j];
        }
    }
}

template <class T>
void add_impl(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void sub_impl(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <class T>
void mul_impl(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <class T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <class T>
void scale_impl(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

template <class T>
void add_rowvec_impl(const T* a, const T* v, T* y,
                     std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const T* arow = a + i * cols;
        T* yrow = y + i * cols;
        for (std::size_t j = 0; j < cols; ++j) yrow[j] = arow[j] + v[j];
    }
}

template <class T>
void mul_rowvec_impl(const T* a, const T* v, T* y,
                     std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const T* arow = a + i * cols;
        T* yrow = y + i * cols;
        for (std::size_t j = 0; j < cols; ++j) yrow[j] = arow[j] * v[j];
    }
}

template <class T>
void scale_rows_impl(const T* a, const T* s, T* y,
                     std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const T si = s[i];
        const T* arow = a + i * cols;
        T* yrow = y + i * cols;
        for (std::size_t j = 0; j < cols; ++j) yrow[j] = si * arow[j];
    }
}

template <class T>
void rot_impl(T* x, T* y, T c, T s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const T xi = x[i];
        const T yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

// Fixed pairwise combine of the lane accumulators; the AVX2 variants extract
// their vector registers and run this exact tree.
template <class T>
T combine_acc(const T* acc) {
    if constexpr (lanes<T>() == 8) {
        const T s01 = acc[0] + acc[1];
        const T s23 = acc[2] + acc[3];
        const T s45 = acc[4] + acc[5];
        const T s67 = acc[6] + acc[7];
        return (s01 + s23) + (s45 + s67);
    } else {
        const T s01 = acc[0] + acc[1];
        const T s23 = acc[2] + acc[3];
        return s01 + s23;
    }
}

template <class T>
T dot_impl(const T* a, const T* b, std::size_t n) {
    constexpr std::size_t L = lanes<T>();
    T acc[L];
    for (std::size_t l = 0; l < L; ++l) acc[l] = T(0);
    std::size_t i = 0;
    for (; i + L <= n; i += L)
        for (std::size_t l = 0; l < L; ++l)
            acc[l] = acc[l] + a[i + l] * b[i + l];
    T s = combine_acc(acc);
    for (; i < n; ++i) s = s + a[i] * b[i];
    return s;
}

template <class T>
T sum_impl(const T* a, std::size_t n) {
    constexpr std::size_t L = lanes<T>();
    T acc[L];
    for (std::size_t l = 0; l < L; ++l) acc[l] = T(0);
    std::size_t i = 0;
    for (; i + L <= n; i += L)
        for (std::size_t l = 0; l < L; ++l)
            acc[l] = acc[l] + a[i + l];
    T s = combine_acc(acc);
    for (; i < n; ++i) s = s + a[i];
    return s;
}

template <class T>
void adamw_update_impl(T* p, const T* g, T* m, T* v, std::size_t n,
                       T lr, T beta1, T beta2, T eps, T weight_decay,
                       T bc1, T bc2) {
    const T one_m_b1 = T(1) - beta1;
    const T one_m_b2 = T(1) - beta2;
    const T wdlr = lr * weight_decay;
    for (std::size_t i = 0; i < n; ++i) {
        const T gi = g[i];
        const T mi = (beta1 * m[i]) + (one_m_b1 * gi);
        const T gg = gi * gi;
        const T vi = (beta2 * v[i]) + (one_m_b2 * gg);
        m[i] = mi;
        v[i] = vi;
        const T mhat = mi / bc1;
        const T vhat = vi / bc2;
        const T den = std::sqrt(vhat) + eps;
        const T upd = lr * (mhat / den);
        const T decay = wdlr * p[i];
        p[i] = (p[i] - upd) - decay;
    }
}

template <class T>
void sgd_update_impl(T* p, const T* g, std::size_t n, T lr) {
    for (std::size_t i = 0; i < n; ++i) {
        const T upd = lr * g[i];
        p[i] = p[i] - upd;
    }
}

template <class T>
Kernels<T> make_table() {
    Kernels<T> t;
    t.matmul = matmul_impl<T>;
    t.add = add_impl<T>;
    t.sub = sub_impl<T>;
    t.mul = mul_impl<T>;
    t.axpy = axpy_impl<T>;
    t.scale = scale_impl<T>;
    t.add_rowvec = add_rowvec_impl<T>;
    t.mul_rowvec = mul_rowvec_impl<T>;
    t.scale_rows = scale_rows_impl<T>;
    t.rot = rot_impl<T>;
    t.dot = dot_impl<T>;
    t.sum = sum_impl<T>;
    t.adamw_update = adamw_update_impl<T>;
    t.sgd_update = sgd_update_impl<T>;
    return t;
}

} // namespace

template <> const Kernels<float>& scalar_kernels<float>() {
    static const Kernels<float> t = make_table<float>();
    return t;
}

template <> const Kernels<double>& scalar_kernels<double>() {
    static const Kernels<double> t = make_table<double>();
    return t;
}

} // namespace specfit::kern
