#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "specfit/error.hpp"

namespace specfit {

// Deterministic random source. The engine is std::mt19937_64 but all value
// mappings (uniform doubles, bounded ints, normals) are implemented here with
// a fixed algorithm, so streams are reproducible independent of the standard
// library's distribution internals. No code path may touch wall-clock time or
// OS entropy; every Rng is explicitly seeded.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled so the mapping is unbiased.
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw ContractError("Rng::uniform_int requires n > 0");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() -
            std::numeric_limits<std::uint64_t>::max() % un;
        for (;;) {
            std::uint64_t x = eng_();
            if (x < limit) return static_cast<std::int64_t>(x % un);
        }
    }

    // Box-Muller without a cached spare: the full Rng state is the engine
    // state, which keeps checkpoint round-trips exact.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <class Real>
    void fill_normal(Real* p, std::size_t n, double stddev) {
        for (std::size_t i = 0; i < n; ++i)
            p[i] = static_cast<Real>(normal() * stddev);
    }

    template <class Real>
    void fill_uniform(Real* p, std::size_t n, double lo, double hi) {
        for (std::size_t i = 0; i < n; ++i)
            p[i] = static_cast<Real>(uniform(lo, hi));
    }

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw IoError("Rng::restore: malformed state string");
    }

private:
    std::mt19937_64 eng_;
};

} // namespace specfit
