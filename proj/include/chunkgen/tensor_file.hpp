#ifndef CHUNKGEN_TENSOR_FILE_HPP
#define CHUNKGEN_TENSOR_FILE_HPP

#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "chunkgen/common.hpp"

namespace chunkgen {

// CGF1 container: "CGF1" magic, u32 rank, rank x u64 dims, then row-major
// float32 payload. All integers and floats little-endian.
struct TensorFile {
    std::vector<uint64_t> dims;
    std::vector<float> data;

    uint64_t element_count() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }

    void validate() const {
        if (dims.empty()) throw ConstraintError("tensor: rank must be >= 1");
        for (uint64_t d : dims)
            if (d < 1) throw ConstraintError("tensor: dims must be >= 1");
        if (data.size() != element_count())
            throw ConstraintError(strfmt("tensor: payload has %zu values, dims imply %llu",
                                         data.size(), (unsigned long long)element_count()));
    }
};

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                          (unsigned char)(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64_le(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_u32_le(std::istream& is, uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
    return true;
}

inline bool get_u64_le(std::istream& is, uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return true;
}

inline void put_f32_le(std::ostream& os, const float* vals, size_t n) {
    // IEEE-754 float bits, byte-serialized little-endian.
    std::vector<unsigned char> buf(n * 4);
    for (size_t i = 0; i < n; ++i) {
        uint32_t u;
        std::memcpy(&u, &vals[i], 4);
        buf[i * 4 + 0] = (unsigned char)(u);
        buf[i * 4 + 1] = (unsigned char)(u >> 8);
        buf[i * 4 + 2] = (unsigned char)(u >> 16);
        buf[i * 4 + 3] = (unsigned char)(u >> 24);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

inline bool get_f32_le(std::istream& is, float* vals, size_t n) {
    std::vector<unsigned char> buf(n * 4);
    if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()))) return false;
    for (size_t i = 0; i < n; ++i) {
        uint32_t u = uint32_t(buf[i * 4]) | (uint32_t(buf[i * 4 + 1]) << 8) |
                     (uint32_t(buf[i * 4 + 2]) << 16) | (uint32_t(buf[i * 4 + 3]) << 24);
        std::memcpy(&vals[i], &u, 4);
    }
    return true;
}

}  // namespace detail

inline void write_tensor(const std::string& path, const TensorFile& t) {
    t.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write("CGF1", 4);
    detail::put_u32_le(os, uint32_t(t.dims.size()));
    for (uint64_t d : t.dims) detail::put_u64_le(os, d);
    detail::put_f32_le(os, t.data.data(), t.data.size());
    if (!os) throw FormatError("write failed: " + path);
}

inline TensorFile read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CGF1", 4) != 0)
        throw FormatError("bad magic in " + path + " (expected CGF1)");
    uint32_t rank;
    if (!detail::get_u32_le(is, rank) || rank < 1)
        throw FormatError("bad rank in " + path);
    TensorFile t;
    t.dims.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        if (!detail::get_u64_le(is, t.dims[i]) || t.dims[i] < 1)
            throw FormatError("bad dims in " + path);
    }
    uint64_t n = t.element_count();
    if (n > (uint64_t(1) << 34))
        throw FormatError("tensor too large in " + path);
    t.data.resize(n);
    if (!detail::get_f32_le(is, t.data.data(), n))
        throw FormatError("truncated payload in " + path);
    return t;
}

}  // namespace chunkgen

#endif
