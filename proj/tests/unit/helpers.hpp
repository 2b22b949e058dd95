#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "atnlab/rng.hpp"
#include "atnlab/tensor.hpp"

namespace testutil {

inline atnlab::Tensor random_tensor(const atnlab::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    atnlab::Tensor t(shape);
    atnlab::RngStream rng(seed);
    for (auto& v : t.data()) {
        v = static_cast<float>(rng.uniform(lo, hi));
    }
    return t;
}

inline atnlab::Tensor random_image(const atnlab::Shape& shape, std::uint64_t seed) {
    return random_tensor(shape, seed, 0.0, 255.0);
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("atnlab_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testutil
