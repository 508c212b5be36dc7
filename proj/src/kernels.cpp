#include "specfit/kernels.hpp"

#include <atomic>

namespace specfit::kern {

#ifdef SPECFIT_HAVE_AVX2
const Kernels<float>& avx2_kernels_f32();
const Kernels<double>& avx2_kernels_f64();
#endif

namespace {
std::atomic<bool> g_force_scalar{false};
} // namespace

bool cpu_has_avx2() {
#if defined(SPECFIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

void force_scalar(bool on) { g_force_scalar.store(on, std::memory_order_relaxed); }

const char* active_isa() {
    if (!g_force_scalar.load(std::memory_order_relaxed) && cpu_has_avx2()) return "avx2";
    return "scalar";
}

template <> const Kernels<float>& active_kernels<float>() {
#ifdef SPECFIT_HAVE_AVX2
    if (!g_force_scalar.load(std::memory_order_relaxed) && cpu_has_avx2())
        return avx2_kernels_f32();
#endif
    return scalar_kernels<float>();
}

template <> const Kernels<double>& active_kernels<double>() {
#ifdef SPECFIT_HAVE_AVX2
    if (!g_force_scalar.load(std::memory_order_relaxed) && cpu_has_avx2())
        return avx2_kernels_f64();
#endif
    return scalar_kernels<double>();
}

} // namespace specfit::kern
