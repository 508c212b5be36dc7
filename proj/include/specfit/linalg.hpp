#pragma once

// Thin SVD and spectral utilities. The factorization is a one-sided Jacobi
// on the thinner orientation: cheap to verify, accurate to near machine
// precision, and entirely adequate for the matrix sizes this project trains.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <type_traits>
#include <vector>

#include "specfit/error.hpp"
#include "specfit/ops.hpp"
#include "specfit/rng.hpp"
#include "specfit/tensor.hpp"

namespace specfit {

template <class Real>
struct SvdFactors {
    Tensor<Real> U;          // d_r x r, orthonormal columns
    std::vector<Real> sigma; // length r, descending, non-negative
    Tensor<Real> V;          // d_c x r, orthonormal columns

    std::int64_t rank() const { return static_cast<std::int64_t>(sigma.size()); }
};

template <class Real>
Real frobenius_norm(const Tensor<Real>& m) {
    const auto& K = kern::active_kernels<Real>();
    return std::sqrt(K.dot(m.data().data(), m.data().data(), m.data().size()));
}

// ||M^T M - I||_F.
template <class Real>
Real orthogonality_defect(const Tensor<Real>& m) {
    require_2d(m, "orthogonality_defect");
    const std::int64_t rows = m.rows(), cols = m.cols();
    const auto& K = kern::active_kernels<Real>();
    std::vector<Real> col_major(m.data().size());
    raw_transpose(m.data().data(), rows, cols, col_major.data());
    Real acc = 0;
    for (std::int64_t i = 0; i < cols; ++i) {
        for (std::int64_t j = 0; j < cols; ++j) {
            Real g = K.dot(col_major.data() + i * rows, col_major.data() + j * rows,
                           static_cast<std::size_t>(rows));
            if (i == j) g -= Real(1);
            acc += g * g;
        }
    }
    return std::sqrt(acc);
}

namespace detail {

// Completes columns with exactly zero norm to an orthonormal basis: pick the
// unit vector with the largest residual against the existing columns, twice
// re-orthogonalized.
template <class Real>
void complete_zero_columns(std::vector<Real>& cols_rm, std::int64_t m, std::int64_t n,
                           const std::vector<Real>& sigma) {
    // cols_rm holds n rows of length m, each row one (unit-to-be) column.
    const auto& K = kern::active_kernels<Real>();
    for (std::int64_t j = 0; j < n; ++j) {
        if (sigma[static_cast<std::size_t>(j)] != Real(0)) continue;
        Real* target = cols_rm.data() + j * m;
        Real best_norm = Real(-1);
        std::vector<Real> best(static_cast<std::size_t>(m));
        std::vector<Real> cand(static_cast<std::size_t>(m));
        for (std::int64_t e = 0; e < m; ++e) {
            std::fill(cand.begin(), cand.end(), Real(0));
            cand[static_cast<std::size_t>(e)] = Real(1);
            for (int pass = 0; pass < 2; ++pass) {
                for (std::int64_t o = 0; o < n; ++o) {
                    if (o == j) continue;
                    const Real* other = cols_rm.data() + o * m;
                    if (o > j && sigma[static_cast<std::size_t>(o)] == Real(0)) continue;
                    const Real proj = K.dot(cand.data(), other, static_cast<std::size_t>(m));
                    K.axpy(-proj, other, cand.data(), static_cast<std::size_t>(m));
                }
            }
            const Real nrm = std::sqrt(K.dot(cand.data(), cand.data(), static_cast<std::size_t>(m)));
            if (nrm > best_norm) {
                best_norm = nrm;
                best = cand;
            }
            if (best_norm > Real(0.5)) break; // good enough, no need to scan all axes
        }
        if (best_norm <= Real(0))
            throw NumericalError("svd_thin: basis completion failed");
        K.scale(Real(1) / best_norm, best.data(), target, static_cast<std::size_t>(m));
    }
}

} // namespace detail

namespace detail {

// One-sided Jacobi core in double precision. The float-facing wrapper
// promotes its input here and rounds the factors back, which keeps the
// 1e-12 relative off-diagonal threshold meaningful in both precisions.
inline SvdFactors<double> svd_thin_f64(const Tensor<double>& w) {
    using Real = double;
    const std::int64_t d_r = w.rows(), d_c = w.cols();

    const bool transposed = d_r < d_c;
    const std::int64_t m = transposed ? d_c : d_r; // long side
    const std::int64_t n = transposed ? d_r : d_c; // thin side, n = r
    const auto& K = kern::active_kernels<Real>();

    // B holds the working matrix column-wise: n contiguous rows of length m.
    std::vector<Real> B(static_cast<std::size_t>(m * n));
    if (transposed) {
        // Columns of W^T are rows of W.
        std::copy(w.data().begin(), w.data().end(), B.begin());
    } else {
        raw_transpose(w.data().data(), d_r, d_c, B.data());
    }
    // VB holds V column-wise: n rows of length n, initialized to identity.
    std::vector<Real> VB(static_cast<std::size_t>(n * n), Real(0));
    for (std::int64_t j = 0; j < n; ++j) VB[static_cast<std::size_t>(j * n + j)] = Real(1);

    // Every visited pair with a nonzero coupling gets rotated; the relative
    // threshold only detects convergence. The final sweep therefore leaves
    // all pairs near machine precision instead of just under the threshold,
    // which is what the orthogonality invariant needs at large rank.
    const Real tol = Real(1e-12);
    const int max_sweeps = 100;
    bool converged = (n == 1);
    Real worst_resid = 0;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        worst_resid = 0;
        for (std::int64_t p = 0; p < n - 1; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                Real* bp = B.data() + p * m;
                Real* bq = B.data() + q * m;
                const Real app = K.dot(bp, bp, static_cast<std::size_t>(m));
                const Real aqq = K.dot(bq, bq, static_cast<std::size_t>(m));
                if (app == Real(0) || aqq == Real(0)) continue;
                const Real apq = K.dot(bp, bq, static_cast<std::size_t>(m));
                if (apq == Real(0)) continue;
                const Real resid = std::abs(apq) / std::sqrt(app * aqq);
                worst_resid = std::max(worst_resid, resid);
                const Real tau = (aqq - app) / (Real(2) * apq);
                const Real t = (tau >= Real(0) ? Real(1) : Real(-1)) /
                               (std::abs(tau) + std::sqrt(Real(1) + tau * tau));
                const Real c = Real(1) / std::sqrt(Real(1) + t * t);
                const Real s = c * t;
                K.rot(bp, bq, c, s, static_cast<std::size_t>(m));
                K.rot(VB.data() + p * n, VB.data() + q * n, c, s, static_cast<std::size_t>(n));
            }
        }
        if (worst_resid <= tol) converged = true;
    }
    if (!converged) {
        // One full clean sweep without rotations is the convergence witness;
        // hitting the cap means the off-diagonal mass would not shrink.
        std::ostringstream os;
        os << "svd_thin: Jacobi did not converge in " << max_sweeps
           << " sweeps; worst relative off-diagonal " << worst_resid;
        throw NumericalError(os.str());
    }

    std::vector<Real> sigma_raw(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) {
        const Real* bj = B.data() + j * m;
        sigma_raw[static_cast<std::size_t>(j)] =
            std::sqrt(K.dot(bj, bj, static_cast<std::size_t>(m)));
    }
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return sigma_raw[static_cast<std::size_t>(a)] > sigma_raw[static_cast<std::size_t>(b)];
    });

    std::vector<Real> sigma(static_cast<std::size_t>(n));
    std::vector<Real> Ucols(static_cast<std::size_t>(n * m)); // n rows of length m
    std::vector<Real> Vcols(static_cast<std::size_t>(n * n)); // n rows of length n
    for (std::int64_t j = 0; j < n; ++j) {
        const std::int64_t src = order[static_cast<std::size_t>(j)];
        const Real sj = sigma_raw[static_cast<std::size_t>(src)];
        sigma[static_cast<std::size_t>(j)] = sj;
        const Real* bj = B.data() + src * m;
        Real* uj = Ucols.data() + j * m;
        if (sj > Real(0)) {
            K.scale(Real(1) / sj, bj, uj, static_cast<std::size_t>(m));
        } else {
            std::fill(uj, uj + m, Real(0)); // completed below
        }
        std::copy_n(VB.data() + src * n, n, Vcols.data() + j * n);
    }
    detail::complete_zero_columns(Ucols, m, n, sigma);

    Tensor<Real> Ulong = Tensor<Real>::zeros({m, n});
    raw_transpose(Ucols.data(), n, m, Ulong.data().data());
    Tensor<Real> Vsq = Tensor<Real>::zeros({n, n});
    raw_transpose(Vcols.data(), n, n, Vsq.data().data());

    SvdFactors<Real> f;
    f.sigma = std::move(sigma);
    if (transposed) {
        f.U = std::move(Vsq);   // d_r x r
        f.V = std::move(Ulong); // d_c x r
    } else {
        f.U = std::move(Ulong);
        f.V = std::move(Vsq);
    }

    // Canonical signs: largest-magnitude entry of each U column positive,
    // flip absorbed into the paired V column.
    const std::int64_t ur = f.U.rows(), vr = f.V.rows();
    for (std::int64_t j = 0; j < n; ++j) {
        Real* ud = f.U.data().data();
        std::int64_t arg = 0;
        for (std::int64_t i = 1; i < ur; ++i)
            if (std::abs(ud[i * n + j]) > std::abs(ud[arg * n + j])) arg = i;
        if (ud[arg * n + j] < Real(0)) {
            for (std::int64_t i = 0; i < ur; ++i) ud[i * n + j] = -ud[i * n + j];
            Real* vd = f.V.data().data();
            for (std::int64_t i = 0; i < vr; ++i) vd[i * n + j] = -vd[i * n + j];
        }
    }
    return f;
}

} // namespace detail

// Thin SVD with descending singular values and a canonical sign choice: the
// largest-magnitude entry of each U column is positive, with the flip
// absorbed into the paired V column. Ties in the ordering keep the
// factorization output order (stable sort).
template <class Real>
SvdFactors<Real> svd_thin(const Tensor<Real>& w) {
    require_2d(w, "svd_thin");
    if (w.rows() < 1 || w.cols() < 1)
        throw ValidationError("svd_thin: degenerate shape " + shape_str(w.shape()));
    if (!all_finite(w)) throw ValidationError("svd_thin: input has non-finite entries");
    if constexpr (std::is_same_v<Real, double>) {
        return detail::svd_thin_f64(w);
    } else {
        Tensor<double> wd = Tensor<double>::zeros(w.shape());
        for (std::size_t i = 0; i < w.data().size(); ++i)
            wd.data()[i] = static_cast<double>(w.data()[i]);
        SvdFactors<double> fd = detail::svd_thin_f64(wd);
        SvdFactors<Real> f;
        f.U = Tensor<Real>::zeros(fd.U.shape());
        f.V = Tensor<Real>::zeros(fd.V.shape());
        for (std::size_t i = 0; i < fd.U.data().size(); ++i)
            f.U.data()[i] = static_cast<Real>(fd.U.data()[i]);
        for (std::size_t i = 0; i < fd.V.data().size(); ++i)
            f.V.data()[i] = static_cast<Real>(fd.V.data()[i]);
        f.sigma.resize(fd.sigma.size());
        for (std::size_t i = 0; i < fd.sigma.size(); ++i)
            f.sigma[i] = static_cast<Real>(fd.sigma[i]);
        return f;
    }
}

// U diag(sigma) V^T, optionally with a replacement sigma; the bias, when
// given, is passed through unchanged so callers can export a dense (W, b)
// pair in one call.
template <class Real>
struct DenseAffine {
    Tensor<Real> w;
    std::vector<Real> bias; // empty when absent
};

template <class Real>
Tensor<Real> reconstruct(const SvdFactors<Real>& f,
                         const std::vector<Real>* sigma_override = nullptr) {
    const std::vector<Real>& s = sigma_override ? *sigma_override : f.sigma;
    if (static_cast<std::int64_t>(s.size()) != f.rank())
        throw DimensionError("reconstruct: override length " + std::to_string(s.size()) +
                             " does not match rank " + std::to_string(f.rank()));
    NoGradGuard ng;
    Tensor<Real> sv = scale_rows(transpose(f.V), Tensor<Real>::from({f.rank()}, s));
    return matmul(f.U, sv);
}

template <class Real>
DenseAffine<Real> reconstruct(const SvdFactors<Real>& f,
                              const std::optional<std::vector<Real>>& sigma_override,
                              const std::optional<std::vector<Real>>& bias) {
    DenseAffine<Real> out;
    out.w = reconstruct(f, sigma_override ? &*sigma_override : nullptr);
    if (bias) out.bias = *bias;
    return out;
}

// Number of singular values above tau_rel * sigma_max; 0 for the zero matrix.
template <class Real>
std::int64_t effective_rank(const Tensor<Real>& m, Real tau_rel = Real(1e-8)) {
    if (!(tau_rel > Real(0) && tau_rel < Real(1)))
        throw ValidationError("effective_rank: tau_rel must lie in (0, 1)");
    SvdFactors<Real> f = svd_thin(m);
    if (f.sigma.empty() || f.sigma[0] == Real(0)) return 0;
    const Real cut = tau_rel * f.sigma[0];
    std::int64_t count = 0;
    for (Real s : f.sigma)
        if (s > cut) ++count;
    return count;
}

// sqrt(sum of squared singular values below index k): the Frobenius error of
// the best rank-k approximation. Tail-first accumulation for accuracy.
template <class Real>
Real truncation_error(const std::vector<Real>& sigma, std::int64_t k) {
    const std::int64_t r = static_cast<std::int64_t>(sigma.size());
    if (k < 0 || k > r)
        throw ContractError("truncation_error: k = " + std::to_string(k) +
                            " outside [0, " + std::to_string(r) + "]");
    Real acc = 0;
    for (std::int64_t i = r - 1; i >= k; --i)
        acc += sigma[static_cast<std::size_t>(i)] * sigma[static_cast<std::size_t>(i)];
    return std::sqrt(acc);
}

// Orthonormal columns from modified Gram-Schmidt (two passes) over a seeded
// gaussian matrix. Used by tests and analysis fixtures.
template <class Real>
Tensor<Real> random_orthonormal(std::int64_t rows, std::int64_t cols, Rng& rng) {
    if (cols > rows)
        throw ValidationError("random_orthonormal: cols " + std::to_string(cols) +
                              " exceed rows " + std::to_string(rows));
    const auto& K = kern::active_kernels<Real>();
    std::vector<Real> colsv(static_cast<std::size_t>(rows * cols));
    rng.fill_normal(colsv.data(), colsv.size(), 1.0);
    // Work column-wise: cols rows of length `rows`.
    for (std::int64_t j = 0; j < cols; ++j) {
        Real* cj = colsv.data() + j * rows;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::int64_t o = 0; o < j; ++o) {
                const Real* co = colsv.data() + o * rows;
                const Real proj = K.dot(cj, co, static_cast<std::size_t>(rows));
                K.axpy(-proj, co, cj, static_cast<std::size_t>(rows));
            }
        }
        const Real nrm = std::sqrt(K.dot(cj, cj, static_cast<std::size_t>(rows)));
        if (nrm < Real(1e-12))
            throw NumericalError("random_orthonormal: degenerate draw");
        K.scale(Real(1) / nrm, cj, cj, static_cast<std::size_t>(rows));
    }
    Tensor<Real> q = Tensor<Real>::zeros({rows, cols});
    raw_transpose(colsv.data(), cols, rows, q.data().data());
    return q;
}

} // namespace specfit
