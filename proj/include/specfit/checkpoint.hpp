#pragma once

// Self-describing named-array container (.sfck): a UTF-8 text header listing
// name/dtype/shape/offset per array, followed by the packed little-endian
// payload. Diff-able, dependency-free, and byte-stable for a given sequence
// of puts, which is what the determinism and resume guarantees lean on.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "specfit/error.hpp"

namespace specfit {

enum class Dtype : std::uint8_t { f32, f64, i64, u8 };

const char* dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& s);
std::size_t dtype_size(Dtype d);

struct CkptArray {
    std::string name;
    Dtype dtype = Dtype::u8;
    std::vector<std::int64_t> shape;
    std::vector<unsigned char> bytes;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

class Checkpoint {
public:
    void put(const std::string& name, Dtype dtype, std::vector<std::int64_t> shape,
             const void* data, std::size_t nbytes);

    void put_f32(const std::string& name, std::vector<std::int64_t> shape,
                 std::span<const float> v) {
        put(name, Dtype::f32, std::move(shape), v.data(), v.size() * sizeof(float));
    }
    void put_f64(const std::string& name, std::vector<std::int64_t> shape,
                 std::span<const double> v) {
        put(name, Dtype::f64, std::move(shape), v.data(), v.size() * sizeof(double));
    }
    void put_i64(const std::string& name, std::vector<std::int64_t> shape,
                 std::span<const std::int64_t> v) {
        put(name, Dtype::i64, std::move(shape), v.data(), v.size() * sizeof(std::int64_t));
    }
    void put_u8(const std::string& name, std::vector<std::int64_t> shape,
                std::span<const unsigned char> v) {
        put(name, Dtype::u8, std::move(shape), v.data(), v.size());
    }
    void put_text(const std::string& name, const std::string& text);
    void put_scalar_i64(const std::string& name, std::int64_t v) {
        put_i64(name, {1}, std::span<const std::int64_t>(&v, 1));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const CkptArray& get(const std::string& name) const;

    // Typed accessors validate dtype (and shape when given) and name the
    // offending array on mismatch.
    std::span<const float> get_f32(const std::string& name,
                                   const std::vector<std::int64_t>* expect_shape = nullptr) const;
    std::span<const double> get_f64(const std::string& name,
                                    const std::vector<std::int64_t>* expect_shape = nullptr) const;
    std::span<const std::int64_t> get_i64(const std::string& name,
                                          const std::vector<std::int64_t>* expect_shape = nullptr) const;
    std::span<const unsigned char> get_u8(const std::string& name) const;
    std::string get_text(const std::string& name) const;
    std::int64_t get_scalar_i64(const std::string& name) const;

    const std::vector<CkptArray>& arrays() const { return arrays_; }

    bool byte_equal(const Checkpoint& other) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    const CkptArray& checked(const std::string& name, Dtype want,
                             const std::vector<std::int64_t>* expect_shape) const;

    std::vector<CkptArray> arrays_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Real-typed helpers used by the templated trainer.
template <class Real>
void ckpt_put_real(Checkpoint& c, const std::string& name, std::vector<std::int64_t> shape,
                   std::span<const Real> v) {
    if constexpr (sizeof(Real) == 4)
        c.put_f32(name, std::move(shape), std::span<const float>(v.data(), v.size()));
    else
        c.put_f64(name, std::move(shape), std::span<const double>(v.data(), v.size()));
}

template <class Real>
std::span<const Real> ckpt_get_real(const Checkpoint& c, const std::string& name,
                                    const std::vector<std::int64_t>* expect_shape = nullptr) {
    if constexpr (sizeof(Real) == 4) {
        auto s = c.get_f32(name, expect_shape);
        return {reinterpret_cast<const Real*>(s.data()), s.size()};
    } else {
        auto s = c.get_f64(name, expect_shape);
        return {reinterpret_cast<const Real*>(s.data()), s.size()};
    }
}

} // namespace specfit
