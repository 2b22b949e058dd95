#include "atnlab/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "atnlab/error.hpp"
#include "json.hpp"

namespace atnlab {

namespace {

using nlohmann::json;

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint64_t get_u64_le(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    return v;
}

void put_floats_le(std::string& out, std::span<const float> values) {
    for (float f : values) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) {
            out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
        }
    }
}

float get_float_le(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return std::bit_cast<float>(bits);
}

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return t;
        }
    }
    fail(ErrorCode::CorruptHeader, "container has no tensor named '" + name + "'");
}

bool Container::has_tensor(const std::string& name) const {
    for (const auto& entry : tensors) {
        if (entry.first == name) {
            return true;
        }
    }
    return false;
}

std::string serialize_container(const Container& c) {
    json header;
    header["format_version"] = kContainerFormatVersion;
    header["kind"] = c.kind;
    header["arch"] = c.arch;
    header["metadata"] = c.metadata;
    json directory = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : c.tensors) {
        const std::uint64_t length = t.numel() * sizeof(float);
        directory.push_back({{"name", name}, {"shape", t.shape().dims()}, {"offset", offset}, {"length", length}});
        offset += length;
    }
    header["tensors"] = std::move(directory);
    const std::string text = header.dump();

    std::string out(kContainerMagic, 8);
    put_u64_le(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& [_, t] : c.tensors) {
        put_floats_le(out, t.data());
    }
    return out;
}

Container parse_container(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 16 || bytes.compare(0, 8, kContainerMagic, 8) != 0) {
        fail(ErrorCode::CorruptHeader, "corrupt header in " + origin + ": missing ATNLAB01 magic");
    }
    const std::uint64_t header_len = get_u64_le(bytes, 8);
    if (header_len > bytes.size() - 16) {
        fail(ErrorCode::CorruptHeader, "corrupt header in " + origin + ": header length exceeds file");
    }
    json header;
    try {
        header = json::parse(bytes.substr(16, header_len));
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptHeader, "corrupt header in " + origin + ": " + e.what());
    }
    Container c;
    try {
        const int version = header.at("format_version").get<int>();
        if (version != kContainerFormatVersion) {
            fail(ErrorCode::VersionMismatch, "version mismatch in " + origin + ": format_version " +
                                                 std::to_string(version) + ", expected " +
                                                 std::to_string(kContainerFormatVersion));
        }
        c.kind = header.at("kind").get<std::string>();
        c.arch = header.at("arch").get<std::map<std::string, std::string>>();
        c.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
        const std::size_t blob_start = 16 + header_len;
        const std::size_t blob_size = bytes.size() - blob_start;
        for (const auto& entry : header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            Shape shape(entry.at("shape").get<std::vector<std::int64_t>>());
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto length = entry.at("length").get<std::uint64_t>();
            if (length != shape.numel() * sizeof(float)) {
                fail(ErrorCode::CorruptHeader, "corrupt header in " + origin + ": tensor '" + name +
                                                   "' length disagrees with its shape");
            }
            if (offset > blob_size || length > blob_size - offset) {
                fail(ErrorCode::TruncatedData, "truncated data in " + origin + ": tensor '" + name +
                                                   "' extends past end of file");
            }
            std::vector<float> values(shape.numel());
            const char* p = bytes.data() + blob_start + offset;
            for (std::size_t i = 0; i < values.size(); ++i) {
                values[i] = get_float_le(p + 4 * i);
            }
            c.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptHeader, "corrupt header in " + origin + ": " + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::ShapeMismatch) {
            fail(ErrorCode::CorruptHeader, "corrupt header in " + origin + ": " + e.what());
        }
        throw;
    }
    return c;
}

void save_container(const std::filesystem::path& path, const Container& container) {
    const std::string bytes = serialize_container(container);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(ErrorCode::Io, "failed writing " + path.string());
    }
}

Container load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_container(buf.str(), path.string());
}

std::string content_hash(const void* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    return content_hash(bytes.data(), bytes.size());
}

}  // namespace atnlab
