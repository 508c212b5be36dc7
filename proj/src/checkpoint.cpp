#include "specfit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace specfit {

const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::f32: return "f32";
        case Dtype::f64: return "f64";
        case Dtype::i64: return "i64";
        case Dtype::u8: return "u8";
    }
    return "?";
}

Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    if (s == "i64") return Dtype::i64;
    if (s == "u8") return Dtype::u8;
    throw IoError("checkpoint: unknown dtype '" + s + "'");
}

std::size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::f32: return 4;
        case Dtype::f64: return 8;
        case Dtype::i64: return 8;
        case Dtype::u8: return 1;
    }
    return 1;
}

void Checkpoint::put(const std::string& name, Dtype dtype, std::vector<std::int64_t> shape,
                     const void* data, std::size_t nbytes) {
    if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos)
        throw ContractError("checkpoint: invalid array name '" + name + "'");
    CkptArray arr;
    arr.name = name;
    arr.dtype = dtype;
    arr.shape = std::move(shape);
    if (static_cast<std::size_t>(arr.numel()) * dtype_size(dtype) != nbytes)
        throw ContractError("checkpoint: byte count mismatch for '" + name + "'");
    arr.bytes.resize(nbytes);
    if (nbytes) std::memcpy(arr.bytes.data(), data, nbytes);
    auto it = index_.find(name);
    if (it != index_.end()) {
        arrays_[it->second] = std::move(arr);
    } else {
        index_.emplace(name, arrays_.size());
        arrays_.push_back(std::move(arr));
    }
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
    put(name, Dtype::u8, {static_cast<std::int64_t>(text.size())}, text.data(), text.size());
}

const CkptArray& Checkpoint::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("checkpoint: missing array '" + name + "'");
    return arrays_[it->second];
}

const CkptArray& Checkpoint::checked(const std::string& name, Dtype want,
                                     const std::vector<std::int64_t>* expect_shape) const {
    const CkptArray& a = get(name);
    if (a.dtype != want)
        throw IoError("checkpoint: array '" + name + "' has dtype " + dtype_name(a.dtype) +
                      ", expected " + dtype_name(want));
    if (expect_shape && a.shape != *expect_shape) {
        std::ostringstream os;
        os << "checkpoint: array '" << name << "' has shape [";
        for (std::size_t i = 0; i < a.shape.size(); ++i) os << (i ? " " : "") << a.shape[i];
        os << "], expected [";
        for (std::size_t i = 0; i < expect_shape->size(); ++i)
            os << (i ? " " : "") << (*expect_shape)[i];
        os << "]";
        throw IoError(os.str());
    }
    return a;
}

std::span<const float> Checkpoint::get_f32(const std::string& name,
                                           const std::vector<std::int64_t>* expect_shape) const {
    const CkptArray& a = checked(name, Dtype::f32, expect_shape);
    return {reinterpret_cast<const float*>(a.bytes.data()), a.bytes.size() / 4};
}

std::span<const double> Checkpoint::get_f64(const std::string& name,
                                            const std::vector<std::int64_t>* expect_shape) const {
    const CkptArray& a = checked(name, Dtype::f64, expect_shape);
    return {reinterpret_cast<const double*>(a.bytes.data()), a.bytes.size() / 8};
}

std::span<const std::int64_t> Checkpoint::get_i64(
    const std::string& name, const std::vector<std::int64_t>* expect_shape) const {
    const CkptArray& a = checked(name, Dtype::i64, expect_shape);
    return {reinterpret_cast<const std::int64_t*>(a.bytes.data()), a.bytes.size() / 8};
}

std::span<const unsigned char> Checkpoint::get_u8(const std::string& name) const {
    const CkptArray& a = checked(name, Dtype::u8, nullptr);
    return {a.bytes.data(), a.bytes.size()};
}

std::string Checkpoint::get_text(const std::string& name) const {
    auto s = get_u8(name);
    return std::string(reinterpret_cast<const char*>(s.data()), s.size());
}

std::int64_t Checkpoint::get_scalar_i64(const std::string& name) const {
    const std::vector<std::int64_t> shape = {1};
    return get_i64(name, &shape)[0];
}

bool Checkpoint::byte_equal(const Checkpoint& other) const {
    if (arrays_.size() != other.arrays_.size()) return false;
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
        const auto& a = arrays_[i];
        const auto& b = other.arrays_[i];
        if (a.name != b.name || a.dtype != b.dtype || a.shape != b.shape ||
            a.bytes.size() != b.bytes.size())
            return false;
        if (!a.bytes.empty() &&
            std::memcmp(a.bytes.data(), b.bytes.data(), a.bytes.size()) != 0)
            return false;
    }
    return true;
}

void Checkpoint::save(const std::string& path) const {
    std::ostringstream header;
    header << "sfck 1\n";
    header << "arrays " << arrays_.size() << "\n";
    std::size_t offset = 0;
    for (const auto& a : arrays_) {
        header << a.name << ' ' << dtype_name(a.dtype) << ' ' << a.shape.size();
        for (auto d : a.shape) header << ' ' << d;
        header << ' ' << offset << ' ' << a.bytes.size() << "\n";
        offset += a.bytes.size();
    }
    header << "data " << offset << "\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& a : arrays_)
        out.write(reinterpret_cast<const char*>(a.bytes.data()),
                  static_cast<std::streamsize>(a.bytes.size()));
    out.flush();
    if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");

    auto fail = [&path](const std::string& why) -> IoError {
        return IoError("checkpoint: malformed file '" + path + "': " + why);
    };

    std::string line;
    if (!std::getline(in, line) || line != "sfck 1") throw fail("bad magic/version line");
    if (!std::getline(in, line)) throw fail("missing array count");
    std::size_t count = 0;
    {
        std::istringstream is(line);
        std::string word;
        is >> word >> count;
        if (word != "arrays" || is.fail()) throw fail("bad array count line");
    }

    // Parse into a local instance; nothing escapes on error.
    Checkpoint ck;
    struct Entry {
        CkptArray arr;
        std::size_t offset = 0;
        std::size_t nbytes = 0;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw fail("truncated header");
        std::istringstream is(line);
        Entry e;
        std::string dtype;
        std::size_t ndim = 0;
        is >> e.arr.name >> dtype >> ndim;
        if (is.fail()) throw fail("bad array line '" + line + "'");
        e.arr.dtype = dtype_from_name(dtype);
        e.arr.shape.resize(ndim);
        for (std::size_t d = 0; d < ndim; ++d) is >> e.arr.shape[d];
        is >> e.offset >> e.nbytes;
        if (is.fail()) throw fail("bad array line '" + line + "'");
        if (static_cast<std::size_t>(e.arr.numel()) * dtype_size(e.arr.dtype) != e.nbytes)
            throw fail("shape/byte mismatch for '" + e.arr.name + "'");
        entries.push_back(std::move(e));
    }
    if (!std::getline(in, line)) throw fail("missing data line");
    std::size_t total = 0;
    {
        std::istringstream is(line);
        std::string word;
        is >> word >> total;
        if (word != "data" || is.fail()) throw fail("bad data line");
    }
    std::vector<unsigned char> payload(total);
    if (total) {
        in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total));
        if (in.gcount() != static_cast<std::streamsize>(total)) throw fail("truncated payload");
    }
    for (auto& e : entries) {
        if (e.offset + e.nbytes > total) throw fail("array '" + e.arr.name + "' out of bounds");
        ck.put(e.arr.name, e.arr.dtype, e.arr.shape, payload.data() + e.offset, e.nbytes);
    }
    return ck;
}

} // namespace specfit
