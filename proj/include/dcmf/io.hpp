#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcmf/core.hpp"
#include "dcmf/errors.hpp"

namespace dcmf {

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const std::string& in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    return v;
}

inline double get_f64_le(const std::string& in, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    return std::bit_cast<double>(v);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open file for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write: " + path.string());
}

/// Shortest text that parses back to the exact same double: 17 significant digits.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline constexpr char kTensorMagic[4] = {'D', 'C', 'M', 'F'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

/// Binary tensor file: magic "DCMF", u32 version, u32 I, u32 J, u32 K,
/// then K*I*J little-endian doubles, slice-major (k outer), row-major
/// within each slice. Round trips are bit exact.
inline void write_tensor(const std::filesystem::path& path, const SliceTensor& t) {
    std::string out;
    out.reserve(20 + static_cast<std::size_t>(t.rows() * t.cols() * t.num_slices()) * 8);
    out.append(kTensorMagic, 4);
    detail::put_u32_le(out, kTensorFormatVersion);
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.rows()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.cols()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.num_slices()));
    for (Index k = 0; k < t.num_slices(); ++k)
        for (Index i = 0; i < t.rows(); ++i)
            for (Index j = 0; j < t.cols(); ++j)
                detail::put_f64_le(out, t.slice(k)(i, j));
    detail::write_file_bytes(path, out);
}

inline SliceTensor read_tensor(const std::filesystem::path& path) {
    const std::string in = detail::read_file_bytes(path);
    if (in.size() < 4 || std::string_view(in.data(), 4) != std::string_view(kTensorMagic, 4))
        throw FormatError("bad magic, expected \"DCMF\"", 0);
    if (in.size() < 8) throw FormatError("truncated header", in.size());
    if (const auto version = detail::get_u32_le(in, 4); version != kTensorFormatVersion)
        throw FormatError("unsupported format version " + std::to_string(version), 4);
    if (in.size() < 20) throw FormatError("truncated header", in.size());
    const std::uint32_t rows = detail::get_u32_le(in, 8);
    const std::uint32_t cols = detail::get_u32_le(in, 12);
    const std::uint32_t num_slices = detail::get_u32_le(in, 16);
    if (rows == 0) throw FormatError("dimension I must be positive", 8);
    if (cols == 0) throw FormatError("dimension J must be positive", 12);
    if (num_slices == 0) throw FormatError("dimension K must be positive", 16);
    const std::uint64_t expected =
        20 + std::uint64_t(rows) * cols * num_slices * 8;
    if (in.size() < expected)
        throw FormatError("truncated payload, expected " + std::to_string(expected) + " bytes",
                          in.size());
    std::vector<Matrix> slices(num_slices, Matrix(rows, cols));
    std::size_t off = 20;
    for (std::uint32_t k = 0; k < num_slices; ++k)
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j) {
                const double v = detail::get_f64_le(in, off);
                if (!std::isfinite(v)) throw FormatError("non-finite tensor entry", off);
                slices[k](i, j) = v;
                off += 8;
            }
    return SliceTensor(std::move(slices));
}

namespace detail {

inline void append_matrix_json(std::string& out, const Matrix& m) {
    out.push_back('[');
    for (Index i = 0; i < m.rows(); ++i) {
        if (i) out.push_back(',');
        out.push_back('[');
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out.push_back(',');
            out += format_double(m(i, j));
        }
        out.push_back(']');
    }
    out.push_back(']');
}

inline Matrix parse_matrix_json(const nlohmann::json& j, const std::string& name) {
    if (!j.is_array() || j.empty() || !j.front().is_array())
        throw FormatError(name + ": expected a non-empty 2-D array");
    const auto rows = static_cast<Index>(j.size());
    const auto cols = static_cast<Index>(j.front().size());
    if (cols == 0) throw FormatError(name + ": rows must be non-empty");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Index>(row.size()) != cols)
            throw FormatError(name + ": ragged rows");
        for (Index c = 0; c < cols; ++c) {
            const auto& v = row[static_cast<std::size_t>(c)];
            if (!v.is_number()) throw FormatError(name + ": non-numeric entry");
            m(i, c) = v.get<double>();
        }
    }
    return m;
}

} // namespace detail

/// Factor file: JSON object {"R","I","J","K","A","B","C"} with row-major
/// nested arrays and doubles printed at 17 significant digits.
inline void write_factors(const std::filesystem::path& path, const FactorSet& f) {
    std::string out;
    out += "{\"R\":" + std::to_string(f.rank());
    out += ",\"I\":" + std::to_string(f.rows());
    out += ",\"J\":" + std::to_string(f.evolving_dim());
    out += ",\"K\":" + std::to_string(f.num_slices());
    out += ",\"A\":";
    detail::append_matrix_json(out, f.a());
    out += ",\"B\":[";
    for (Index k = 0; k < f.num_slices(); ++k) {
        if (k) out.push_back(',');
        detail::append_matrix_json(out, f.b(k));
    }
    out += "],\"C\":";
    detail::append_matrix_json(out, f.c());
    out += "}\n";
    detail::write_file_bytes(path, out);
}

inline FactorSet read_factors(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file_bytes(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("factor file: ") + e.what(), e.byte);
    }
    for (const char* key : {"R", "I", "J", "K", "A", "B", "C"})
        if (!j.contains(key)) throw FormatError(std::string("factor file: missing key ") + key);
    const auto rank = j["R"].get<Index>();
    const auto rows = j["I"].get<Index>();
    const auto evolving = j["J"].get<Index>();
    const auto num_slices = j["K"].get<Index>();
    if (rank < 1 || rows < 1 || evolving < 1 || num_slices < 1)
        throw FormatError("factor file: dimensions must be positive");

    Matrix a = detail::parse_matrix_json(j["A"], "A");
    if (a.rows() != rows || a.cols() != rank)
        throw FormatError("factor file: A has shape " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(rank));
    if (!j["B"].is_array() || static_cast<Index>(j["B"].size()) != num_slices)
        throw FormatError("factor file: B list length must equal K");
    std::vector<Matrix> b;
    b.reserve(static_cast<std::size_t>(num_slices));
    for (Index k = 0; k < num_slices; ++k) {
        Matrix bk = detail::parse_matrix_json(j["B"][static_cast<std::size_t>(k)],
                                              "B[" + std::to_string(k) + "]");
        if (bk.rows() != evolving || bk.cols() != rank)
            throw FormatError("factor file: B[" + std::to_string(k) + "] has wrong shape");
        b.push_back(std::move(bk));
    }
    Matrix c = detail::parse_matrix_json(j["C"], "C");
    if (c.rows() != num_slices || c.cols() != rank)
        throw FormatError("factor file: C has shape " + std::to_string(c.rows()) + "x" +
                          std::to_string(c.cols()) + ", expected " + std::to_string(num_slices) +
                          "x" + std::to_string(rank));
    try {
        return FactorSet(std::move(a), std::move(b), std::move(c));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("factor file: ") + e.what());
    }
}

/// Bare row-major nested array, same float formatting as the factor file.
inline void write_matrix_json(const std::filesystem::path& path, const Matrix& m) {
    std::string out;
    detail::append_matrix_json(out, m);
    out.push_back('\n');
    detail::write_file_bytes(path, out);
}

inline Matrix read_matrix_json(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file_bytes(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("matrix file: ") + e.what(), e.byte);
    }
    return detail::parse_matrix_json(j, path.string());
}

} // namespace dcmf
