#include "deforest/npy.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deforest/common.hpp"

namespace deforest {

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

struct Dtype {
    char kind = 0;   // 'f', 'i', 'u'
    int size = 0;    // bytes per element
};

Dtype parse_descr(const std::string& descr, const std::filesystem::path& path) {
    // Accepts forms like "<f4", "|u1", "<i2". Big endian is rejected.
    if (descr.size() != 3) fail("npy: unsupported descr '", descr, "' in ", path.string());
    const char order = descr[0];
    const char kind = descr[1];
    const int size = descr[2] - '0';
    if (order == '>') fail("npy: big-endian data not supported: ", path.string());
    if (order != '<' && order != '|' && order != '=')
        fail("npy: unsupported byte order '", order, "' in ", path.string());
    const bool ok = (kind == 'f' && (size == 4 || size == 8)) ||
                    (kind == 'i' && (size == 1 || size == 2 || size == 4)) ||
                    (kind == 'u' && (size == 1 || size == 2 || size == 4));
    if (!ok) fail("npy: unsupported dtype '", descr, "' in ", path.string());
    return {kind, size};
}

// Minimal parser for the header dict written by numpy and by this module.
std::string dict_value(const std::string& header, const std::string& key,
                       const std::filesystem::path& path) {
    const auto kpos = header.find("'" + key + "'");
    if (kpos == std::string::npos) fail("npy: header missing key '", key, "' in ", path.string());
    auto pos = header.find(':', kpos);
    if (pos == std::string::npos) fail("npy: malformed header in ", path.string());
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    size_t end = pos;
    if (header[pos] == '\'') {
        end = header.find('\'', pos + 1);
        if (end == std::string::npos) fail("npy: malformed header in ", path.string());
        return header.substr(pos + 1, end - pos - 1);
    }
    if (header[pos] == '(') {
        end = header.find(')', pos);
        if (end == std::string::npos) fail("npy: malformed header in ", path.string());
        return header.substr(pos, end - pos + 1);
    }
    while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
    return header.substr(pos, end - pos);
}

void write_npy(const std::filesystem::path& path, const Grid& g,
               const std::string& descr, const std::vector<char>& payload) {
    std::string header = cat("{'descr': '", descr,
                             "', 'fortran_order': False, 'shape': (", g.h, ", ", g.w, "), }");
    // Pad so that the data section starts on a 64-byte boundary.
    size_t total = 6 + 2 + 2 + header.size() + 1;
    const size_t pad = (64 - total % 64) % 64;
    header.append(pad, ' ');
    header.push_back('\n');

    std::ofstream out(path, std::ios::binary);
    if (!out) fail("npy: cannot open for writing: ", path.string());
    out.write(kMagic, 6);
    const char version[2] = {1, 0};
    out.write(version, 2);
    const auto hlen = static_cast<std::uint16_t>(header.size());
    const char hlen_le[2] = {static_cast<char>(hlen & 0xff), static_cast<char>(hlen >> 8)};
    out.write(hlen_le, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) fail("npy: write failed: ", path.string());
}

} // namespace

Grid npy_read_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("npy: cannot open: ", path.string());

    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kMagic, 6) != 0)
        fail("npy: bad magic (not a .npy file): ", path.string());
    char version[2];
    in.read(version, 2);
    if (!in || version[0] != 1) fail("npy: unsupported format version in ", path.string());
    unsigned char hlen_le[2];
    in.read(reinterpret_cast<char*>(hlen_le), 2);
    const size_t hlen = hlen_le[0] | (static_cast<size_t>(hlen_le[1]) << 8);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) fail("npy: truncated header: ", path.string());

    const Dtype dt = parse_descr(dict_value(header, "descr", path), path);
    if (dict_value(header, "fortran_order", path) != "False")
        fail("npy: fortran-ordered arrays not supported: ", path.string());

    const std::string shape = dict_value(header, "shape", path);
    long h = 0, w = 0;
    if (std::sscanf(shape.c_str(), "(%ld, %ld)", &h, &w) != 2 &&
        std::sscanf(shape.c_str(), "(%ld,%ld)", &h, &w) != 2)
        fail("npy: expected a 2-D array, got shape ", shape, " in ", path.string());
    if (h <= 0 || w <= 0) fail("npy: empty array in ", path.string());

    const size_t count = static_cast<size_t>(h) * static_cast<size_t>(w);
    std::vector<char> raw(count * dt.size);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!in) fail("npy: truncated data: ", path.string());

    Grid g(static_cast<int>(h), static_cast<int>(w));
    const char* p = raw.data();
    for (size_t i = 0; i < count; ++i, p += dt.size) {
        double value = 0.0;
        if (dt.kind == 'f' && dt.size == 4) {
            float f;
            std::memcpy(&f, p, 4);
            value = f;
        } else if (dt.kind == 'f' && dt.size == 8) {
            std::memcpy(&value, p, 8);
        } else if (dt.kind == 'i') {
            std::int32_t x = 0;
            if (dt.size == 1) { std::int8_t t; std::memcpy(&t, p, 1); x = t; }
            else if (dt.size == 2) { std::int16_t t; std::memcpy(&t, p, 2); x = t; }
            else { std::memcpy(&x, p, 4); }
            value = x;
        } else {
            std::uint32_t x = 0;
            if (dt.size == 1) { std::uint8_t t; std::memcpy(&t, p, 1); x = t; }
            else if (dt.size == 2) { std::uint16_t t; std::memcpy(&t, p, 2); x = t; }
            else { std::memcpy(&x, p, 4); }
            value = x;
        }
        if (!std::isfinite(value))
            fail("npy: non-finite value at flat index ", i, " in ", path.string());
        g.v[i] = value;
    }
    return g;
}

void npy_write_f4(const std::filesystem::path& path, const Grid& g) {
    std::vector<char> payload(g.v.size() * 4);
    char* p = payload.data();
    for (double value : g.v) {
        const float f = static_cast<float>(value);
        std::memcpy(p, &f, 4);
        p += 4;
    }
    write_npy(path, g, "<f4", payload);
}

void npy_write_f8(const std::filesystem::path& path, const Grid& g) {
    std::vector<char> payload(g.v.size() * 8);
    std::memcpy(payload.data(), g.v.data(), payload.size());
    write_npy(path, g, "<f8", payload);
}

void npy_write_u1(const std::filesystem::path& path, const Grid& g) {
    std::vector<char> payload(g.v.size());
    char* p = payload.data();
    for (double value : g.v) {
        if (value < 0.0 || value > 255.0 || value != std::floor(value))
            fail("npy: value ", value, " not representable as uint8 when writing ", path.string());
        *p++ = static_cast<char>(static_cast<unsigned char>(value));
    }
    write_npy(path, g, "|u1", payload);
}

} // namespace deforest
