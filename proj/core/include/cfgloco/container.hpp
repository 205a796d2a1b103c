#pragma once

// Versioned artifact container shared by dataset and checkpoint files:
//
//   "<kind> <version>\n"                 format-version line
//   u64 little-endian header length
//   JSON header (array directory, metadata, content_sha256)
//   raw little-endian array payload
//
// Loaders reject unknown kinds/versions and payload hash mismatches.

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cfgloco {

enum class DType { F64, F32, U8 };

struct NamedArray {
    std::string name;
    DType dtype = DType::F64;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::byte> bytes;

    template <typename T>
    static NamedArray from(std::string name, DType dtype, std::int64_t rows, std::int64_t cols, const T* data) {
        NamedArray a{std::move(name), dtype, rows, cols, {}};
        const auto* p = reinterpret_cast<const std::byte*>(data);
        a.bytes.assign(p, p + static_cast<std::size_t>(rows * cols) * sizeof(T));
        return a;
    }

    template <typename T>
    std::vector<T> as() const {
        std::vector<T> out(bytes.size() / sizeof(T));
        std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
        return out;
    }
};

struct Container {
    std::string kind;
    int version = 1;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& array(const std::string& name) const;
    bool has_array(const std::string& name) const;
    /// SHA-256 over the concatenated array payloads in directory order.
    std::string payload_hash() const;
};

void write_container(const Container& c, const std::filesystem::path& path);
/// Throws FormatError on a wrong kind, an unknown version, truncation or a
/// payload hash mismatch.
Container read_container(const std::filesystem::path& path, const std::string& expected_kind, int max_version);

std::string sha256_hex(std::span<const std::byte> data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace cfgloco
