#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/tensor.hpp"

namespace sdtag {

// Weight container: magic "SDTK", u32 version, u32 entry count, then a
// manifest of (name, shape, byte offset into the payload) followed by the
// payload of little-endian 64-bit floats. Offsets are payload-relative.
namespace ckpt {

constexpr char kMagic[4] = {'S', 'D', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("checkpoint: unexpected end of file", static_cast<std::size_t>(is.tellg()));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint: unexpected end of file", static_cast<std::size_t>(is.tellg()));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    std::uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace detail

struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

inline void save(const std::string& path, const std::vector<Entry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    detail::put_u32(os, kVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
        detail::put_u64(os, offset);
        offset += 8ull * e.data.size();
    }
    for (const auto& e : entries) {
        for (double d : e.data) detail::put_f64(os, d);
    }
    if (!os) throw Error("checkpoint: write failed: " + path);
}

inline std::vector<Entry> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw ParseError("checkpoint: bad magic in " + path, 0);
    }
    const std::uint32_t version = detail::get_u32(is);
    if (version != kVersion) {
        throw ParseError("checkpoint: unsupported version " + std::to_string(version), 4);
    }
    const std::uint32_t count = detail::get_u32(is);
    struct Meta {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Meta> metas(count);
    for (auto& m : metas) {
        const std::uint32_t len = detail::get_u32(is);
        m.name.resize(len);
        is.read(m.name.data(), len);
        const std::uint32_t ndim = detail::get_u32(is);
        m.shape.resize(ndim);
        for (auto& d : m.shape) d = detail::get_u32(is);
        m.offset = detail::get_u64(is);
        if (!is) throw ParseError("checkpoint: truncated manifest", static_cast<std::size_t>(is.tellg()));
    }
    const std::streampos payload_start = is.tellg();
    std::vector<Entry> out(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        out[i].name = metas[i].name;
        out[i].shape = metas[i].shape;
        const std::size_t n = shape_numel(metas[i].shape);
        out[i].data.resize(n);
        is.seekg(payload_start + static_cast<std::streamoff>(metas[i].offset));
        for (std::size_t j = 0; j < n; ++j) out[i].data[j] = detail::get_f64(is);
        if (!is) throw ParseError("checkpoint: truncated payload", static_cast<std::size_t>(is.tellg()));
    }
    return out;
}

inline std::map<std::string, Entry> load_map(const std::string& path) {
    std::map<std::string, Entry> out;
    for (auto& e : load(path)) out[e.name] = std::move(e);
    return out;
}

}  // namespace ckpt
}  // namespace sdtag
