// AVX2 variants of the arithmetic kernels. Lanes always map to independent
// output elements and accumulation order matches the scalar reference, so
// every function here is bit-identical to its scalar counterpart. Built with
// -mavx2 -ffp-contract=off; mul/add are kept as separate instructions on
// purpose (no FMA), matching the scalar rounding sequence.

#include "specfit/kernels.hpp"

#ifdef SPECFIT_HAVE_AVX2

#include <immintrin.h>

#include <cmath>

namespace specfit::kern {
namespace {

// ---------------------------------------------------------------- float ----

void matmul_f32(const float* a, const float* b, float* y,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        float* yrow = y + i * n;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) _mm256_storeu_ps(yrow + j, _mm256_setzero_ps());
        for (; j < n; ++j) yrow[j] = 0.0f;
        const float* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const float aik = arow[kk];
            const __m256 va = _mm256_set1_ps(aik);
            const float* brow = b + kk * n;
            j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vy = _mm256_loadu_ps(yrow + j);
                __m256 vb = _mm256_loadu_ps(brow + j);
                vy = _mm256_add_ps(vy, _mm256_mul_ps(va, vb));
                _mm256_storeu_ps(yrow + j, vy);
            }
            for (; j < n; ++j) yrow[j] = yrow[j] + aik * brow[j];
        }
    }
}

void add_f32(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_add_ps(vy, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void scale_f32(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = alpha * x[i];
}

void add_rowvec_f32(const float* a, const float* v, float* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* arow = a + r * cols;
        float* yrow = y + r * cols;
        std::size_t j = 0;
        for (; j + 8 <= cols; j += 8)
            _mm256_storeu_ps(yrow + j,
                             _mm256_add_ps(_mm256_loadu_ps(arow + j), _mm256_loadu_ps(v + j)));
        for (; j < cols; ++j) yrow[j] = arow[j] + v[j];
    }
}

void mul_rowvec_f32(const float* a, const float* v, float* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* arow = a + r * cols;
        float* yrow = y + r * cols;
        std::size_t j = 0;
        for (; j + 8 <= cols; j += 8)
            _mm256_storeu_ps(yrow + j,
                             _mm256_mul_ps(_mm256_loadu_ps(arow + j), _mm256_loadu_ps(v + j)));
        for (; j < cols; ++j) yrow[j] = arow[j] * v[j];
    }
}

void scale_rows_f32(const float* a, const float* s, float* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const __m256 vs = _mm256_set1_ps(s[r]);
        const float* arow = a + r * cols;
        float* yrow = y + r * cols;
        std::size_t j = 0;
        for (; j + 8 <= cols; j += 8)
            _mm256_storeu_ps(yrow + j, _mm256_mul_ps(vs, _mm256_loadu_ps(arow + j)));
        for (; j < cols; ++j) yrow[j] = s[r] * arow[j];
    }
}

void rot_f32(float* x, float* y, float c, float s, std::size_t n) {
    const __m256 vc = _mm256_set1_ps(c);
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vx = _mm256_loadu_ps(x + i);
        const __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(x + i, _mm256_sub_ps(_mm256_mul_ps(vc, vx), _mm256_mul_ps(vs, vy)));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_mul_ps(vs, vx), _mm256_mul_ps(vc, vy)));
    }
    for (; i < n; ++i) {
        const float xi = x[i];
        const float yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

float combine8(__m256 v) {
    alignas(32) float acc[8];
    _mm256_store_ps(acc, v);
    const float s01 = acc[0] + acc[1];
    const float s23 = acc[2] + acc[3];
    const float s45 = acc[4] + acc[5];
    const float s67 = acc[6] + acc[7];
    return (s01 + s23) + (s45 + s67);
}

float dot_f32(const float* a, const float* b, std::size_t n) {
    __m256 vacc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        vacc = _mm256_add_ps(vacc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    float s = combine8(vacc);
    for (; i < n; ++i) s = s + a[i] * b[i];
    return s;
}

float sum_f32(const float* a, std::size_t n) {
    __m256 vacc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) vacc = _mm256_add_ps(vacc, _mm256_loadu_ps(a + i));
    float s = combine8(vacc);
    for (; i < n; ++i) s = s + a[i];
    return s;
}

void adamw_update_f32(float* p, const float* g, float* m, float* v, std::size_t n,
                      float lr, float beta1, float beta2, float eps,
                      float weight_decay, float bc1, float bc2) {
    const float one_m_b1 = 1.0f - beta1;
    const float one_m_b2 = 1.0f - beta2;
    const float wdlr = lr * weight_decay;
    const __m256 vb1 = _mm256_set1_ps(beta1);
    const __m256 vb2 = _mm256_set1_ps(beta2);
    const __m256 v1b1 = _mm256_set1_ps(one_m_b1);
    const __m256 v1b2 = _mm256_set1_ps(one_m_b2);
    const __m256 vlr = _mm256_set1_ps(lr);
    const __m256 veps = _mm256_set1_ps(eps);
    const __m256 vbc1 = _mm256_set1_ps(bc1);
    const __m256 vbc2 = _mm256_set1_ps(bc2);
    const __m256 vwdlr = _mm256_set1_ps(wdlr);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vg = _mm256_loadu_ps(g + i);
        const __m256 vm = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)),
                                        _mm256_mul_ps(v1b1, vg));
        const __m256 vgg = _mm256_mul_ps(vg, vg);
        const __m256 vv = _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)),
                                        _mm256_mul_ps(v1b2, vgg));
        _mm256_storeu_ps(m + i, vm);
        _mm256_storeu_ps(v + i, vv);
        const __m256 vmhat = _mm256_div_ps(vm, vbc1);
        const __m256 vvhat = _mm256_div_ps(vv, vbc2);
        const __m256 vden = _mm256_add_ps(_mm256_sqrt_ps(vvhat), veps);
        const __m256 vupd = _mm256_mul_ps(vlr, _mm256_div_ps(vmhat, vden));
        const __m256 vp = _mm256_loadu_ps(p + i);
        const __m256 vdecay = _mm256_mul_ps(vwdlr, vp);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_sub_ps(vp, vupd), vdecay));
    }
    for (; i < n; ++i) {
        const float gi = g[i];
        const float mi = (beta1 * m[i]) + (one_m_b1 * gi);
        const float gg = gi * gi;
        const float vi = (beta2 * v[i]) + (one_m_b2 * gg);
        m[i] = mi;
        v[i] = vi;
        const float mhat = mi / bc1;
        const float vhat = vi / bc2;
        const float den = std::sqrt(vhat) + eps;
        const float upd = lr * (mhat / den);
        const float decay = wdlr * p[i];
        p[i] = (p[i] - upd) - decay;
    }
}

void sgd_update_f32(float* p, const float* g, std::size_t n, float lr) {
    const __m256 vlr = _mm256_set1_ps(lr);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vupd = _mm256_mul_ps(vlr, _mm256_loadu_ps(g + i));
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), vupd));
    }
    for (; i < n; ++i) {
        const float upd = lr * g[i];
        p[i] = p[i] - upd;
    }
}

// --------------------------------------------------------------- double ----

void matmul_f64(const double* a, const double* b, double* y,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* yrow = y + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) _mm256_storeu_pd(yrow + j, _mm256_setzero_pd());
        for (; j < n; ++j) yrow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const __m256d va = _mm256_set1_pd(aik);
            const double* brow = b + kk * n;
            j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vy = _mm256_loadu_pd(yrow + j);
                __m256d vb = _mm256_loadu_pd(brow + j);
                vy = _mm256_add_pd(vy, _mm256_mul_pd(va, vb));
                _mm256_storeu_pd(yrow + j, vy);
            }
            for (; j < n; ++j) yrow[j] = yrow[j] + aik * brow[j];
        }
    }
}

void add_f64(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void scale_f64(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = alpha * x[i];
}

void add_rowvec_f64(const double* a, const double* v, double* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* arow = a + r * cols;
        double* yrow = y + r * cols;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4)
            _mm256_storeu_pd(yrow + j,
                             _mm256_add_pd(_mm256_loadu_pd(arow + j), _mm256_loadu_pd(v + j)));
        for (; j < cols; ++j) yrow[j] = arow[j] + v[j];
    }
}

void mul_rowvec_f64(const double* a, const double* v, double* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* arow = a + r * cols;
        double* yrow = y + r * cols;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4)
            _mm256_storeu_pd(yrow + j,
                             _mm256_mul_pd(_mm256_loadu_pd(arow + j), _mm256_loadu_pd(v + j)));
        for (; j < cols; ++j) yrow[j] = arow[j] * v[j];
    }
}

void scale_rows_f64(const double* a, const double* s, double* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const __m256d vs = _mm256_set1_pd(s[r]);
        const double* arow = a + r * cols;
        double* yrow = y + r * cols;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4)
            _mm256_storeu_pd(yrow + j, _mm256_mul_pd(vs, _mm256_loadu_pd(arow + j)));
        for (; j < cols; ++j) yrow[j] = s[r] * arow[j];
    }
}

void rot_f64(double* x, double* y, double c, double s, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        const __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(x + i, _mm256_sub_pd(_mm256_mul_pd(vc, vx), _mm256_mul_pd(vs, vy)));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(vs, vx), _mm256_mul_pd(vc, vy)));
    }
    for (; i < n; ++i) {
        const double xi = x[i];
        const double yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

double combine4(__m256d v) {
    alignas(32) double acc[4];
    _mm256_store_pd(acc, v);
    const double s01 = acc[0] + acc[1];
    const double s23 = acc[2] + acc[3];
    return s01 + s23;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vacc = _mm256_add_pd(vacc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    double s = combine4(vacc);
    for (; i < n; ++i) s = s + a[i] * b[i];
    return s;
}

double sum_f64(const double* a, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(a + i));
    double s = combine4(vacc);
    for (; i < n; ++i) s = s + a[i];
    return s;
}

void adamw_update_f64(double* p, const double* g, double* m, double* v, std::size_t n,
                      double lr, double beta1, double beta2, double eps,
                      double weight_decay, double bc1, double bc2) {
    const double one_m_b1 = 1.0 - beta1;
    const double one_m_b2 = 1.0 - beta2;
    const double wdlr = lr * weight_decay;
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d v1b1 = _mm256_set1_pd(one_m_b1);
    const __m256d v1b2 = _mm256_set1_pd(one_m_b2);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vbc1 = _mm256_set1_pd(bc1);
    const __m256d vbc2 = _mm256_set1_pd(bc2);
    const __m256d vwdlr = _mm256_set1_pd(wdlr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        const __m256d vm = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                                         _mm256_mul_pd(v1b1, vg));
        const __m256d vgg = _mm256_mul_pd(vg, vg);
        const __m256d vv = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(v1b2, vgg));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        const __m256d vmhat = _mm256_div_pd(vm, vbc1);
        const __m256d vvhat = _mm256_div_pd(vv, vbc2);
        const __m256d vden = _mm256_add_pd(_mm256_sqrt_pd(vvhat), veps);
        const __m256d vupd = _mm256_mul_pd(vlr, _mm256_div_pd(vmhat, vden));
        const __m256d vp = _mm256_loadu_pd(p + i);
        const __m256d vdecay = _mm256_mul_pd(vwdlr, vp);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_sub_pd(vp, vupd), vdecay));
    }
    for (; i < n; ++i) {
        const double gi = g[i];
        const double mi = (beta1 * m[i]) + (one_m_b1 * gi);
        const double gg = gi * gi;
        const double vi = (beta2 * v[i]) + (one_m_b2 * gg);
        m[i] = mi;
        v[i] = vi;
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        const double den = std::sqrt(vhat) + eps;
        const double upd = lr * (mhat / den);
        const double decay = wdlr * p[i];
        p[i] = (p[i] - upd) - decay;
    }
}

void sgd_update_f64(double* p, const double* g, std::size_t n, double lr) {
    const __m256d vlr = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vupd = _mm256_mul_pd(vlr, _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), vupd));
    }
    for (; i < n; ++i) {
        const double upd = lr * g[i];
        p[i] = p[i] - upd;
    }
}

} // namespace

const Kernels<float>& avx2_kernels_f32() {
    static const Kernels<float> t = [] {
        Kernels<float> k;
        k.matmul = matmul_f32;
        k.add = add_f32;
        k.sub = sub_f32;
        k.mul = mul_f32;
        k.axpy = axpy_f32;
        k.scale = scale_f32;
        k.add_rowvec = add_rowvec_f32;
        k.mul_rowvec = mul_rowvec_f32;
        k.scale_rows = scale_rows_f32;
        k.rot = rot_f32;
        k.dot = dot_f32;
        k.sum = sum_f32;
        k.adamw_update = adamw_update_f32;
        k.sgd_update = sgd_update_f32;
        return k;
    }();
    return t;
}

const Kernels<double>& avx2_kernels_f64() {
    static const Kernels<double> t = [] {
        Kernels<double> k;
        k.matmul = matmul_f64;
        k.add = add_f64;
        k.sub = sub_f64;
        k.mul = mul_f64;
        k.axpy = axpy_f64;
        k.scale = scale_f64;
        k.add_rowvec = add_rowvec_f64;
        k.mul_rowvec = mul_rowvec_f64;
        k.scale_rows = scale_rows_f64;
        k.rot = rot_f64;
        k.dot = dot_f64;
        k.sum = sum_f64;
        k.adamw_update = adamw_update_f64;
        k.sgd_update = sgd_update_f64;
        return k;
    }();
    return t;
}

} // namespace specfit::kern

#endif // SPECFIT_HAVE_AVX2
