#pragma once

// Shared test oracles. Everything here is deliberately independent of the
// library's compute path: naive loops, central differences, explicit
// reconstructions.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <vector>

#include "specfit/rng.hpp"
#include "specfit/tensor.hpp"

namespace testutil {

// Naive triple-loop matrix product, the reference for every matmul check.
template <class Real>
std::vector<Real> naive_matmul(const std::vector<Real>& a, const std::vector<Real>& b,
                               std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<Real> y(static_cast<std::size_t>(m * n), Real(0));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t kk = 0; kk < k; ++kk)
                y[i * n + j] = y[i * n + j] + a[i * k + kk] * b[kk * n + j];
    return y;
}

template <class Real>
specfit::Tensor<Real> random_tensor(specfit::Shape shape, specfit::Rng& rng, double stddev = 1.0) {
    auto t = specfit::Tensor<Real>::zeros(std::move(shape));
    rng.fill_normal(t.data().data(), t.data().size(), stddev);
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central-difference gradient check of `loss_fn` (a pure re-evaluation of the
// forward pass) against the analytic gradient already stored on `param`.
// Returns the worst relative error over all coordinates.
template <class Real>
double finite_diff_max_rel_err(specfit::Tensor<Real>& param,
                               const std::function<double()>& loss_fn,
                               const std::vector<Real>& analytic_grad,
                               double h = 1e-4) {
    double worst = 0.0;
    auto data = param.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Real saved = data[i];
        data[i] = saved + static_cast<Real>(h);
        const double up = loss_fn();
        data[i] = saved - static_cast<Real>(h);
        const double down = loss_fn();
        data[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, rel_err(static_cast<double>(analytic_grad[i]), numeric));
    }
    return worst;
}

inline std::uint64_t fnv1a(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <class Real>
std::uint64_t tensor_hash(const specfit::Tensor<Real>& t) {
    return fnv1a(t.data().data(), t.data().size() * sizeof(Real));
}

template <class Real>
bool bit_equal(const specfit::Tensor<Real>& a, const specfit::Tensor<Real>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(Real)) == 0;
}

} // namespace testutil
