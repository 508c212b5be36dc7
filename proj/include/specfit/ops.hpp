#pragma once

// Differentiable operations over Tensor<Real>. Forward math runs on the
// dispatched kernels; backward recipes accumulate additively so a tensor used
// on several paths receives the sum of all path gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "specfit/rng.hpp"
#include "specfit/tensor.hpp"

namespace specfit {

template <class Real>
void raw_transpose(const Real* src, std::int64_t rows, std::int64_t cols, Real* dst) {
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            dst[j * rows + i] = src[i * cols + j];
}

template <class Real>
void require_2d(const Tensor<Real>& t, const char* op) {
    if (t.ndim() != 2)
        throw DimensionError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    std::vector<Real> out(static_cast<std::size_t>(m * n));
    kern::active_kernels<Real>().matmul(a.data().data(), b.data().data(), out.data(),
                                        static_cast<std::size_t>(m), static_cast<std::size_t>(k),
                                        static_cast<std::size_t>(n));
    return make_op<Real>(
        {m, n}, std::move(out), {a, b},
        [m, k, n](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            const auto& K = kern::active_kernels<Real>();
            if (A.requires_grad) {
                std::vector<Real> bt(static_cast<std::size_t>(k * n));
                raw_transpose(B.data.data(), k, n, bt.data());
                std::vector<Real> tmp(static_cast<std::size_t>(m * k));
                K.matmul(self.grad.data(), bt.data(), tmp.data(),
                         static_cast<std::size_t>(m), static_cast<std::size_t>(n),
                         static_cast<std::size_t>(k));
                A.accumulate(tmp.data(), tmp.size());
            }
            if (B.requires_grad) {
                std::vector<Real> at(static_cast<std::size_t>(m * k));
                raw_transpose(A.data.data(), m, k, at.data());
                std::vector<Real> tmp(static_cast<std::size_t>(k * n));
                K.matmul(at.data(), self.grad.data(), tmp.data(),
                         static_cast<std::size_t>(k), static_cast<std::size_t>(m),
                         static_cast<std::size_t>(n));
                B.accumulate(tmp.data(), tmp.size());
            }
        });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    require_2d(a, "transpose");
    const std::int64_t m = a.rows(), n = a.cols();
    std::vector<Real> out(static_cast<std::size_t>(m * n));
    raw_transpose(a.data().data(), m, n, out.data());
    return make_op<Real>(
        {n, m}, std::move(out), {a},
        [m, n](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            std::vector<Real> tmp(static_cast<std::size_t>(m * n));
            raw_transpose(self.grad.data(), n, m, tmp.data());
            A.accumulate(tmp.data(), tmp.size());
        });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a, b, "add");
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().add(a.data().data(), b.data().data(), out.data(), out.size());
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a, b},
        [](TensorNode<Real>& self) {
            self.parents[0]->accumulate(self.grad.data(), self.grad.size());
            self.parents[1]->accumulate(self.grad.data(), self.grad.size());
        });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a, b, "sub");
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().sub(a.data().data(), b.data().data(), out.data(), out.size());
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a, b},
        [](TensorNode<Real>& self) {
            self.parents[0]->accumulate(self.grad.data(), self.grad.size());
            auto& B = *self.parents[1];
            if (B.requires_grad) {
                B.ensure_grad();
                kern::active_kernels<Real>().axpy(Real(-1), self.grad.data(), B.grad.data(),
                                                  self.grad.size());
            }
        });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a, b, "mul");
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().mul(a.data().data(), b.data().data(), out.data(), out.size());
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a, b},
        [](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            const auto& K = kern::active_kernels<Real>();
            std::vector<Real> tmp(self.grad.size());
            if (A.requires_grad) {
                K.mul(self.grad.data(), B.data.data(), tmp.data(), tmp.size());
                A.accumulate(tmp.data(), tmp.size());
            }
            if (B.requires_grad) {
                K.mul(self.grad.data(), A.data.data(), tmp.data(), tmp.size());
                B.accumulate(tmp.data(), tmp.size());
            }
        });
}

template <class Real>
Tensor<Real> mul_scalar(const Tensor<Real>& a, Real c) {
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().scale(c, a.data().data(), out.data(), out.size());
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a},
        [c](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            kern::active_kernels<Real>().axpy(c, self.grad.data(), A.grad.data(), self.grad.size());
        });
}

// Broadcast add of a length-cols vector over every row (bias add).
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& a, const Tensor<Real>& v) {
    require_2d(a, "add_rowvec");
    if (v.numel() != a.cols())
        throw DimensionError("add_rowvec: vector " + shape_str(v.shape()) +
                             " does not match columns of " + shape_str(a.shape()));
    const std::int64_t m = a.rows(), n = a.cols();
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().add_rowvec(a.data().data(), v.data().data(), out.data(),
                                            static_cast<std::size_t>(m), static_cast<std::size_t>(n));
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a, v},
        [m, n](TensorNode<Real>& self) {
            self.parents[0]->accumulate(self.grad.data(), self.grad.size());
            auto& V = *self.parents[1];
            if (!V.requires_grad) return;
            std::vector<Real> tmp(static_cast<std::size_t>(n), Real(0));
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    tmp[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i * n + j)];
            V.accumulate(tmp.data(), tmp.size());
        });
}

// Broadcast elementwise multiply of a length-cols vector over every row; the
// column scale used to apply the singular values in a factored forward.
template <class Real>
Tensor<Real> mul_rowvec(const Tensor<Real>& a, const Tensor<Real>& v) {
    require_2d(a, "mul_rowvec");
    if (v.numel() != a.cols())
        throw DimensionError("mul_rowvec: vector " + shape_str(v.shape()) +
                             " does not match columns of " + shape_str(a.shape()));
    const std::int64_t m = a.rows(), n = a.cols();
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().mul_rowvec(a.data().data(), v.data().data(), out.data(),
                                            static_cast<std::size_t>(m), static_cast<std::size_t>(n));
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a, v},
        [m, n](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            auto& V = *self.parents[1];
            const auto& K = kern::active_kernels<Real>();
            if (A.requires_grad) {
                std::vector<Real> tmp(self.grad.size());
                K.mul_rowvec(self.grad.data(), V.data.data(), tmp.data(),
                             static_cast<std::size_t>(m), static_cast<std::size_t>(n));
                A.accumulate(tmp.data(), tmp.size());
            }
            if (V.requires_grad) {
                std::vector<Real> tmp(static_cast<std::size_t>(n), Real(0));
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                        tmp[static_cast<std::size_t>(j)] +=
                            self.grad[static_cast<std::size_t>(i * n + j)] *
                            A.data[static_cast<std::size_t>(i * n + j)];
                V.accumulate(tmp.data(), tmp.size());
            }
        });
}

// y[i,j] = s[i] * a[i,j]: the diagonal left-action of a vector on a matrix.
template <class Real>
Tensor<Real> scale_rows(const Tensor<Real>& a, const Tensor<Real>& s) {
    require_2d(a, "scale_rows");
    if (s.numel() != a.rows())
        throw DimensionError("scale_rows: vector " + shape_str(s.shape()) +
                             " does not match rows of " + shape_str(a.shape()));
    const std::int64_t m = a.rows(), n = a.cols();
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().scale_rows(a.data().data(), s.data().data(), out.data(),
                                            static_cast<std::size_t>(m), static_cast<std::size_t>(n));
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a, s},
        [m, n](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            auto& S = *self.parents[1];
            const auto& K = kern::active_kernels<Real>();
            if (A.requires_grad) {
                std::vector<Real> tmp(self.grad.size());
                K.scale_rows(self.grad.data(), S.data.data(), tmp.data(),
                             static_cast<std::size_t>(m), static_cast<std::size_t>(n));
                A.accumulate(tmp.data(), tmp.size());
            }
            if (S.requires_grad) {
                std::vector<Real> tmp(static_cast<std::size_t>(m));
                for (std::int64_t i = 0; i < m; ++i)
                    tmp[static_cast<std::size_t>(i)] =
                        K.dot(self.grad.data() + i * n, A.data.data() + i * n,
                              static_cast<std::size_t>(n));
                S.accumulate(tmp.data(), tmp.size());
            }
        });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real s = kern::active_kernels<Real>().sum(a.data().data(), a.data().size());
    return make_op<Real>(
        {1}, std::vector<Real>{s}, {a},
        [](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            const Real g = self.grad[0];
            for (auto& x : A.grad) x += g;
        });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
    if (a.numel() == 0) throw DimensionError("mean: empty tensor");
    return mul_scalar(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    std::vector<Real> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > Real(0) ? a.data()[i] : Real(0);
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a},
        [](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (A.data[i] > Real(0)) A.grad[i] += self.grad[i];
        });
}

// Exact (erf-based) gaussian-error linear unit.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    constexpr Real inv_sqrt2 = Real(0.7071067811865475244);
    std::vector<Real> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real x = a.data()[i];
        out[i] = Real(0.5) * x * (Real(1) + std::erf(x * inv_sqrt2));
    }
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a},
        [](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            constexpr Real inv_sqrt2pi = Real(0.3989422804014326779);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const Real x = A.data[i];
                const Real cdf = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2));
                const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
                A.grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        });
}

// Row-wise layer normalization with learned gain/shift.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps = Real(1e-5)) {
    require_2d(x, "layer_norm");
    const std::int64_t m = x.rows(), n = x.cols();
    if (gamma.numel() != n || beta.numel() != n)
        throw DimensionError("layer_norm: gain/shift " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match columns of " +
                             shape_str(x.shape()));
    std::vector<Real> out(x.data().size());
    std::vector<Real> xhat(x.data().size());
    std::vector<Real> inv_std(static_cast<std::size_t>(m));
    const Real* xd = x.data().data();
    const Real* gd = gamma.data().data();
    const Real* bd = beta.data().data();
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* row = xd + i * n;
        Real mu = 0;
        for (std::int64_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<Real>(n);
        Real var = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            const Real d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<Real>(n);
        const Real is = Real(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < n; ++j) {
            const Real xh = (row[j] - mu) * is;
            xhat[static_cast<std::size_t>(i * n + j)] = xh;
            out[static_cast<std::size_t>(i * n + j)] = gd[j] * xh + bd[j];
        }
    }
    return make_op<Real>(
        Shape(x.shape()), std::move(out), {x, gamma, beta},
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<Real>& self) {
            auto& X = *self.parents[0];
            auto& G = *self.parents[1];
            auto& B = *self.parents[2];
            if (X.requires_grad) {
                X.ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    const Real is = inv_std[static_cast<std::size_t>(i)];
                    Real sum_dxh = 0, sum_dxh_xh = 0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        const std::size_t ij = static_cast<std::size_t>(i * n + j);
                        const Real dxh = self.grad[ij] * G.data[static_cast<std::size_t>(j)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat[ij];
                    }
                    for (std::int64_t j = 0; j < n; ++j) {
                        const std::size_t ij = static_cast<std::size_t>(i * n + j);
                        const Real dxh = self.grad[ij] * G.data[static_cast<std::size_t>(j)];
                        X.grad[ij] += is * (dxh - (sum_dxh + xhat[ij] * sum_dxh_xh) / static_cast<Real>(n));
                    }
                }
            }
            if (G.requires_grad) {
                G.ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) {
                        const std::size_t ij = static_cast<std::size_t>(i * n + j);
                        G.grad[static_cast<std::size_t>(j)] += self.grad[ij] * xhat[ij];
                    }
            }
            if (B.requires_grad) {
                B.ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                        B.grad[static_cast<std::size_t>(j)] +=
                            self.grad[static_cast<std::size_t>(i * n + j)];
            }
        });
}

// Numerically stable row softmax (max subtraction).
template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
    require_2d(a, "softmax_rows");
    const std::int64_t m = a.rows(), n = a.cols();
    if (n == 0) throw DimensionError("softmax_rows: empty class dimension " + shape_str(a.shape()));
    std::vector<Real> out(a.data().size());
    const Real* ad = a.data().data();
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* row = ad + i * n;
        Real mx = row[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Real z = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            const Real e = std::exp(row[j] - mx);
            out[static_cast<std::size_t>(i * n + j)] = e;
            z += e;
        }
        const Real iz = Real(1) / z;
        for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(i * n + j)] *= iz;
    }
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a},
        [m, n](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            for (std::int64_t i = 0; i < m; ++i) {
                Real dot = 0;
                for (std::int64_t j = 0; j < n; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i * n + j);
                    dot += self.grad[ij] * self.data[ij];
                }
                for (std::int64_t j = 0; j < n; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i * n + j);
                    A.grad[ij] += self.data[ij] * (self.grad[ij] - dot);
                }
            }
        });
}

// Mean cross-entropy of logits against integer targets, fused with a stable
// log-softmax.
template <class Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, const std::vector<std::int64_t>& targets) {
    require_2d(logits, "softmax_cross_entropy");
    const std::int64_t m = logits.rows(), n = logits.cols();
    if (n == 0)
        throw DimensionError("softmax_cross_entropy: empty class dimension " + shape_str(logits.shape()));
    if (static_cast<std::int64_t>(targets.size()) != m)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + shape_str(logits.shape()));
    for (auto t : targets)
        if (t < 0 || t >= n)
            throw ValidationError("softmax_cross_entropy: target " + std::to_string(t) +
                                  " outside [0, " + std::to_string(n) + ")");
    std::vector<Real> probs(logits.data().size());
    const Real* ld = logits.data().data();
    Real loss = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* row = ld + i * n;
        Real mx = row[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Real z = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            const Real e = std::exp(row[j] - mx);
            probs[static_cast<std::size_t>(i * n + j)] = e;
            z += e;
        }
        const Real iz = Real(1) / z;
        for (std::int64_t j = 0; j < n; ++j) probs[static_cast<std::size_t>(i * n + j)] *= iz;
        loss += std::log(z) - (row[targets[static_cast<std::size_t>(i)]] - mx);
    }
    loss /= static_cast<Real>(m);
    return make_op<Real>(
        {1}, std::vector<Real>{loss}, {logits},
        [m, n, targets, probs = std::move(probs)](TensorNode<Real>& self) {
            auto& L = *self.parents[0];
            if (!L.requires_grad) return;
            L.ensure_grad();
            const Real g = self.grad[0] / static_cast<Real>(m);
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t j = 0; j < n; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i * n + j);
                    Real p = probs[ij];
                    if (j == targets[static_cast<std::size_t>(i)]) p -= Real(1);
                    L.grad[ij] += g * p;
                }
            }
        });
}

// Row gather: out[t, :] = table[ids[t], :].
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table, const std::vector<std::int64_t>& ids) {
    require_2d(table, "embedding");
    const std::int64_t v = table.rows(), d = table.cols();
    for (auto id : ids)
        if (id < 0 || id >= v)
            throw ValidationError("embedding: id " + std::to_string(id) + " outside [0, " +
                                  std::to_string(v) + ")");
    const std::int64_t t = static_cast<std::int64_t>(ids.size());
    std::vector<Real> out(static_cast<std::size_t>(t * d));
    for (std::int64_t i = 0; i < t; ++i)
        std::copy_n(table.data().data() + ids[static_cast<std::size_t>(i)] * d, d, out.data() + i * d);
    return make_op<Real>(
        {t, d}, std::move(out), {table},
        [d, ids](TensorNode<Real>& self) {
            auto& T = *self.parents[0];
            if (!T.requires_grad) return;
            T.ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                kern::active_kernels<Real>().axpy(
                    Real(1), self.grad.data() + static_cast<std::int64_t>(i) * d,
                    T.grad.data() + ids[i] * d, static_cast<std::size_t>(d));
        });
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, std::int64_t j0, std::int64_t width) {
    require_2d(a, "slice_cols");
    const std::int64_t m = a.rows(), n = a.cols();
    if (j0 < 0 || width < 0 || j0 + width > n)
        throw DimensionError("slice_cols: [" + std::to_string(j0) + ", " +
                             std::to_string(j0 + width) + ") outside " + shape_str(a.shape()));
    std::vector<Real> out(static_cast<std::size_t>(m * width));
    for (std::int64_t i = 0; i < m; ++i)
        std::copy_n(a.data().data() + i * n + j0, width, out.data() + i * width);
    return make_op<Real>(
        {m, width}, std::move(out), {a},
        [m, n, j0, width](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < width; ++j)
                    A.grad[static_cast<std::size_t>(i * n + j0 + j)] +=
                        self.grad[static_cast<std::size_t>(i * width + j)];
        });
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::int64_t m = parts[0].rows();
    std::int64_t n = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != m)
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        n += p.cols();
    }
    std::vector<Real> out(static_cast<std::size_t>(m * n));
    std::vector<std::int64_t> widths;
    widths.reserve(parts.size());
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p.cols();
        widths.push_back(w);
        for (std::int64_t i = 0; i < m; ++i)
            std::copy_n(p.data().data() + i * w, w, out.data() + i * n + off);
        off += w;
    }
    return make_op<Real>(
        {m, n}, std::move(out), parts,
        [m, n, widths](TensorNode<Real>& self) {
            std::int64_t off2 = 0;
            for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                auto& P = *self.parents[pi];
                const std::int64_t w = widths[pi];
                if (P.requires_grad) {
                    P.ensure_grad();
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < w; ++j)
                            P.grad[static_cast<std::size_t>(i * w + j)] +=
                                self.grad[static_cast<std::size_t>(i * n + off2 + j)];
                }
                off2 += w;
            }
        });
}

// Inverted dropout: zero with probability p in train mode and scale survivors
// by 1/(1-p); identity in eval mode. Mask draws come from the given Rng in
// row-major order.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& a, Real p, Rng& rng, bool train) {
    if (!(p >= Real(0) && p < Real(1)))
        throw ValidationError("dropout: probability must be in [0, 1), got " + std::to_string(p));
    if (!train || p == Real(0)) return a;
    const Real keep_scale = Real(1) / (Real(1) - p);
    std::vector<Real> mask(a.data().size());
    for (auto& mk : mask) mk = (rng.uniform() >= static_cast<double>(p)) ? keep_scale : Real(0);
    std::vector<Real> out(a.data().size());
    kern::active_kernels<Real>().mul(a.data().data(), mask.data(), out.data(), out.size());
    return make_op<Real>(
        Shape(a.shape()), std::move(out), {a},
        [mask = std::move(mask)](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            std::vector<Real> tmp(self.grad.size());
            kern::active_kernels<Real>().mul(self.grad.data(), mask.data(), tmp.data(), tmp.size());
            A.accumulate(tmp.data(), tmp.size());
        });
}

// Sum of absolute values with subgradient 0 at 0.
template <class Real>
Tensor<Real> l1_sum(const Tensor<Real>& a) {
    Real s = 0;
    for (Real x : a.data()) s += std::abs(x);
    return make_op<Real>(
        {1}, std::vector<Real>{s}, {a},
        [](TensorNode<Real>& self) {
            auto& A = *self.parents[0];
            if (!A.requires_grad) return;
            A.ensure_grad();
            const Real g = self.grad[0];
            for (std::size_t i = 0; i < A.data.size(); ++i) {
                if (A.data[i] > Real(0)) A.grad[i] += g;
                else if (A.data[i] < Real(0)) A.grad[i] -= g;
            }
        });
}

// Non-differentiable convenience: row argmax for accuracy metrics.
template <class Real>
std::vector<std::int64_t> argmax_rows(const Tensor<Real>& a) {
    require_2d(a, "argmax_rows");
    const std::int64_t m = a.rows(), n = a.cols();
    std::vector<std::int64_t> out(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* row = a.data().data() + i * n;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < n; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

template <class Real>
bool all_finite(const Tensor<Real>& a) {
    for (Real x : a.data())
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace specfit
