#include <cfgloco/container.hpp>
#include <cfgloco/errors.hpp>

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace cfgloco {

static_assert(std::endian::native == std::endian::little, "artifact files are written little-endian");

namespace {

std::string_view dtype_name(DType t) {
    switch (t) {
        case DType::F64: return "f64";
        case DType::F32: return "f32";
        case DType::U8: return "u8";
    }
    return "?";
}

DType parse_dtype(const std::string& s) {
    if (s == "f64") return DType::F64;
    if (s == "f32") return DType::F32;
    if (s == "u8") return DType::U8;
    throw FormatError("unknown array dtype '" + s + "'");
}

std::size_t dtype_size(DType t) { return t == DType::F64 ? 8 : t == DType::F32 ? 4 : 1; }

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("sha256: digest init failed");
    }
    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xF]);
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

const NamedArray& Container::array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw FormatError(kind + ": missing array '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return true;
    return false;
}

std::string Container::payload_hash() const {
    Sha256 h;
    for (const auto& a : arrays) h.update(a.bytes.data(), a.bytes.size());
    return h.hex();
}

std::string sha256_hex(std::span<const std::byte> data) {
    Sha256 h;
    h.update(data.data(), data.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for hashing");
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

void write_container(const Container& c, const std::filesystem::path& path) {
    nlohmann::json header = c.meta;
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : c.arrays) {
        if (a.bytes.size() != static_cast<std::size_t>(a.rows * a.cols) * dtype_size(a.dtype))
            throw InvalidArgument("container: array '" + a.name + "' has inconsistent size");
        dir.push_back({{"name", a.name}, {"dtype", dtype_name(a.dtype)}, {"rows", a.rows}, {"cols", a.cols},
                       {"offset", offset}});
        offset += a.bytes.size();
    }
    header["arrays"] = dir;
    header["content_sha256"] = c.payload_hash();
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << c.kind << ' ' << c.version << '\n';
    const std::uint64_t len = header_text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& a : c.arrays)
        out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path, const std::string& expected_kind, int max_version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::string first_line;
    std::getline(in, first_line);
    std::istringstream fl(first_line);
    Container c;
    if (!(fl >> c.kind >> c.version)) throw FormatError(path.string() + ": missing format-version line");
    if (c.kind != expected_kind)
        throw FormatError(path.string() + ": expected a '" + expected_kind + "' file, found '" + c.kind + "'");
    if (c.version < 1 || c.version > max_version)
        throw FormatError(path.string() + ": unsupported " + c.kind + " format version " + std::to_string(c.version) +
                          " (this build reads up to " + std::to_string(max_version) + ")");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ull << 32)) throw FormatError(path.string() + ": truncated header");
    std::string header_text(len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError(path.string() + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed header: " + e.what());
    }
    for (const auto& entry : header.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.dtype = parse_dtype(entry.at("dtype").get<std::string>());
        a.rows = entry.at("rows").get<std::int64_t>();
        a.cols = entry.at("cols").get<std::int64_t>();
        a.bytes.resize(static_cast<std::size_t>(a.rows * a.cols) * dtype_size(a.dtype));
        in.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
        if (!in) throw FormatError(path.string() + ": truncated payload in array '" + a.name + "'");
        c.arrays.push_back(std::move(a));
    }
    const std::string stored = header.at("content_sha256").get<std::string>();
    header.erase("arrays");
    header.erase("content_sha256");
    c.meta = std::move(header);
    if (c.payload_hash() != stored) throw FormatError(path.string() + ": content hash mismatch");
    return c;
}

}  // namespace cfgloco
