#pragma once

#include <cstddef>

namespace specfit::kern {

// Runtime-dispatched arithmetic kernels backing the tensor engine, the SVD
// and the optimizers. Two variants exist per precision: a scalar reference
// and an AVX2 implementation. Every SIMD kernel is written so its result is
// bit-identical to the scalar reference:
//   - elementwise kernels map lanes to independent output elements and use
//     separate mul/add (no FMA contraction),
//   - matmul accumulates each output element in the same k-order in both
//     variants,
//   - reductions (dot, sum) use a fixed lane-blocked order: LANES independent
//     accumulators, a fixed pairwise combine, then a sequential tail. LANES
//     is 8 for f32 and 4 for f64 and the scalar reference implements the same
//     schedule.
// Dispatch therefore never changes numerics, only speed.
template <class T>
struct Kernels {
    // y = a (m x k) * b (k x n), row-major; y is overwritten.
    void (*matmul)(const T* a, const T* b, T* y,
                   std::size_t m, std::size_t k, std::size_t n);

    void (*add)(const T* a, const T* b, T* y, std::size_t n);
    void (*sub)(const T* a, const T* b, T* y, std::size_t n);
    void (*mul)(const T* a, const T* b, T* y, std::size_t n);
    // y += alpha * x
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    // y = alpha * x
    void (*scale)(T alpha, const T* x, T* y, std::size_t n);
    // y[i,j] = a[i,j] + v[j]
    void (*add_rowvec)(const T* a, const T* v, T* y, std::size_t rows, std::size_t cols);
    // y[i,j] = a[i,j] * v[j]
    void (*mul_rowvec)(const T* a, const T* v, T* y, std::size_t rows, std::size_t cols);
    // y[i,j] = s[i] * a[i,j]
    void (*scale_rows)(const T* a, const T* s, T* y, std::size_t rows, std::size_t cols);
    // Plane rotation of two rows: x' = c*x - s*y, y' = s*x + c*y.
    void (*rot)(T* x, T* y, T c, T s, std::size_t n);

    T (*dot)(const T* a, const T* b, std::size_t n);
    T (*sum)(const T* a, std::size_t n);

    // Decoupled-weight-decay Adam step on one contiguous vector. bc1/bc2 are
    // the bias-correction denominators 1 - beta1^t and 1 - beta2^t.
    void (*adamw_update)(T* p, const T* g, T* m, T* v, std::size_t n,
                         T lr, T beta1, T beta2, T eps, T weight_decay,
                         T bc1, T bc2);
    // p -= lr * g
    void (*sgd_update)(T* p, const T* g, std::size_t n, T lr);
};

template <class T> const Kernels<T>& scalar_kernels();

// The dispatched table: AVX2 when the CPU supports it (and not disabled),
// scalar otherwise.
template <class T> const Kernels<T>& active_kernels();

// Name of the variant active_kernels() currently returns: "avx2" or "scalar".
const char* active_isa();

// Test hook: route active_kernels() to the scalar table regardless of CPU.
void force_scalar(bool on);

bool cpu_has_avx2();

} // namespace specfit::kern
