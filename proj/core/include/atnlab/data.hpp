#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atnlab/tensor.hpp"

namespace atnlab {

/// Labelled images with shape [count, channels, H, W] on the [0, 255] scale.
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;
    std::string id;  // content hash over images and labels

    std::size_t size() const noexcept { return labels.size(); }
    Shape image_shape() const { return images.shape().drop_front(); }

    Dataset subset(std::span<const std::size_t> indices) const;
    /// Contiguous rows [begin, end) as a batch tensor.
    Tensor batch(std::size_t begin, std::size_t end) const { return images.slice_rows(begin, end); }
};

std::string dataset_id(const Tensor& images, std::span<const int> labels);

/// Validates the dataset invariants and fills in `id`.
Dataset make_dataset(Tensor images, std::vector<int> labels, int num_classes);

/// Largest class count synth_dataset can render (shape types x stroke patterns).
int synth_max_classes();

/// Procedurally rendered grayscale shapes. Image i has label i mod num_classes;
/// a class is a (shape type, stroke pattern) pair and every image gets seeded
/// jitter in position, scale, rotation, contrast and background texture.
Dataset synth_dataset(std::uint64_t seed, std::size_t count, int num_classes, int side);

/// Reads an IDX image file (magic 0x00000803) and label file (magic 0x00000801).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Seeded shuffle followed by a split into (train, eval).
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace atnlab
