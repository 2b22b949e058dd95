#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "atnlab/tensor.hpp"

namespace atnlab {

inline constexpr char kContainerMagic[9] = "ATNLAB01";
inline constexpr int kContainerFormatVersion = 1;

/// On-disk layout shared by checkpoints, cached datasets and adversarial
/// archives:
///
///   8 bytes   magic "ATNLAB01"
///   8 bytes   little-endian u64 length of the JSON header
///   N bytes   UTF-8 JSON header: format_version, kind, arch, metadata and a
///             tensor directory of {name, shape, offset, length}
///   ...       little-endian float32 blobs in directory order; offsets are
///             relative to the first blob byte
struct Container {
    std::string kind;
    std::map<std::string, std::string> arch;
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const Container& container);
Container load_container(const std::filesystem::path& path);

/// Serialized bytes of a container, for hashing without touching disk.
std::string serialize_container(const Container& container);
Container parse_container(const std::string& bytes, const std::string& origin);

/// FNV-1a 64-bit digest rendered as 16 hex digits.
std::string content_hash(const void* data, std::size_t size);
std::string file_hash(const std::filesystem::path& path);

}  // namespace atnlab
