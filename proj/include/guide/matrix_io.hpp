#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "guide/common.hpp"

namespace guide {

// GFT1 binary matrix container, little-endian:
//   bytes 0-3   magic "GFT1"
//   byte  4     dtype code (0 = f32, 1 = f64)
//   bytes 5-7   reserved, zero
//   bytes 8-15  u64 rows
//   bytes 16-23 u64 cols
//   payload     row-major values
enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

static_assert(std::endian::native == std::endian::little, "GFT1 writer assumes a little-endian host");

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(is.gcount() == sizeof(v), ErrorCode::TruncatedPayload, "header ends early");
    return v;
}

}  // namespace detail

inline void write_matrix(std::ostream& os, const Mat& m, Dtype dtype) {
    require(m.allFinite(), ErrorCode::NonFiniteValue, "matrix contains NaN or infinite values");
    os.write("GFT1", 4);
    const std::uint8_t code = static_cast<std::uint8_t>(dtype);
    os.put(static_cast<char>(code));
    os.put(0).put(0).put(0);
    detail::put_u64(os, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(os, static_cast<std::uint64_t>(m.cols()));
    if (dtype == Dtype::f64) {
        os.write(reinterpret_cast<const char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    } else {
        std::vector<float> buf(static_cast<std::size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
        os.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(sizeof(float) * buf.size()));
    }
    require(os.good(), ErrorCode::IoError, "write failed");
}

inline void write_matrix(const std::filesystem::path& path, const Mat& m, Dtype dtype) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.is_open(), ErrorCode::IoError, "cannot open for writing: " + path.string());
    write_matrix(os, m, dtype);
    os.flush();
    require(os.good(), ErrorCode::IoError, "flush failed: " + path.string());
}

inline Mat read_matrix(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    require(is.gcount() == 4, ErrorCode::TruncatedPayload, "file shorter than the magic field");
    require(std::memcmp(magic, "GFT1", 4) == 0, ErrorCode::BadMagic,
            "expected magic GFT1, got '" + std::string(magic, 4) + "'");
    char hdr[4] = {};
    is.read(hdr, 4);
    require(is.gcount() == 4, ErrorCode::TruncatedPayload, "file shorter than the header");
    const std::uint8_t code = static_cast<std::uint8_t>(hdr[0]);
    require(code <= 1, ErrorCode::UnknownDtype, "dtype code " + std::to_string(code));
    const Dtype dtype = static_cast<Dtype>(code);
    const std::uint64_t rows = detail::get_u64(is);
    const std::uint64_t cols = detail::get_u64(is);
    constexpr std::uint64_t kMaxDim = 1ULL << 32;
    require(rows < kMaxDim && cols < kMaxDim, ErrorCode::TruncatedPayload,
            "implausible shape " + std::to_string(rows) + "x" + std::to_string(cols));
    const std::uint64_t count = rows * cols;
    const std::size_t esize = dtype == Dtype::f64 ? sizeof(double) : sizeof(float);

    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (dtype == Dtype::f64) {
        is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(count * esize));
    } else {
        std::vector<float> buf(static_cast<std::size_t>(count));
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * esize));
        for (std::size_t i = 0; i < buf.size(); ++i) m.data()[static_cast<Eigen::Index>(i)] = static_cast<double>(buf[i]);
    }
    require(static_cast<std::uint64_t>(is.gcount()) == count * esize, ErrorCode::TruncatedPayload,
            "payload needs " + std::to_string(count * esize) + " bytes, got " + std::to_string(is.gcount()));
    return m;
}

inline Mat read_matrix(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.is_open(), ErrorCode::IoError, "cannot open for reading: " + path.string());
    Mat m = read_matrix(is);
    is.peek();
    require(is.eof(), ErrorCode::TrailingBytes, "data past the declared payload in " + path.string());
    return m;
}

}  // namespace guide
