#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "atnlab/data.hpp"
#include "atnlab/graph.hpp"

namespace atnlab {

/// A small convnet ending in global average pooling, a dense layer and a
/// softmax. `feature_tap` is the activation right before the pooling node.
struct ClassifierModel {
    ComputeGraph graph;
    int num_classes = 0;
    NodeId feature_tap = 0;
    NodeId logits = 0;
    std::string arch_name;
};

/// Encoder-decoder producing a residual direction in (-1, 1) per pixel; the
/// adversarial image is clip(x + eps * direction).
struct GeneratorModel {
    ComputeGraph graph;
    float epsilon_train = 16.0f;
};

/// Shallow residual image-to-image network used by the robust-enhance filter
/// branches.
struct FilterModel {
    ComputeGraph graph;
};

using Metadata = std::map<std::string, std::string>;

const std::vector<std::string>& classifier_architectures();

ClassifierModel build_classifier(std::string_view arch_name, int num_classes, const Shape& input_shape,
                                 std::uint64_t seed = 1);
GeneratorModel build_generator(const Shape& input_shape, float epsilon_train, std::uint64_t seed = 1);
FilterModel build_filter(const Shape& input_shape, std::uint64_t seed = 1);

/// Probability vector ([N], or [B,N] for a batch).
Tensor classify(const ClassifierModel& model, const Tensor& image);
Tensor features(const ClassifierModel& model, const Tensor& image);
/// Argmax class per image of a batch [B,C,H,W] (or a single image).
std::vector<int> predict(const ClassifierModel& model, const Tensor& images);

/// Result of one generator pass, kept for backpropagation.
struct GeneratedBatch {
    Tensor adversarial;
    Activations acts;
    std::vector<std::uint8_t> pass;  // 1 where the pixel clamp was inactive
    float epsilon = 0.0f;
};

GeneratedBatch generate_with_cache(const GeneratorModel& gen, const Tensor& images, float epsilon);
Tensor generate_adversarial(const GeneratorModel& gen, const Tensor& image, float epsilon);
/// Parameter gradients given d(loss)/d(adversarial image).
GradResult generator_backward(const GeneratorModel& gen, const GeneratedBatch& batch, const Tensor& grad_adv);

struct ClassifierTrainConfig {
    int epochs = 10;
    int batch_size = 32;
    float learning_rate = 0.02f;
    float momentum = 0.9f;
    // Keeps the softmax away from saturation so probability-margin losses
    // still carry gradient on the trained model.
    float label_smoothing = 0.1f;
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Cross-entropy training against label-smoothed targets; returns per-epoch mean loss and train accuracy.
std::vector<EpochStats> fit_classifier(ClassifierModel& model, const Dataset& data, const ClassifierTrainConfig& cfg);
double accuracy(const ClassifierModel& model, const Dataset& data);

// Checkpoints use the shared container format (see container.hpp).
void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path, const Metadata& meta = {});
void save_checkpoint(const GeneratorModel& model, const std::filesystem::path& path, const Metadata& meta = {});
void save_checkpoint(const FilterModel& model, const std::filesystem::path& path, const Metadata& meta = {});

/// Loads a classifier; when `expected_arch` is non-empty the stored
/// architecture must match it.
ClassifierModel load_classifier(const std::filesystem::path& path, std::string_view expected_arch = {},
                                Metadata* meta = nullptr);
GeneratorModel load_generator(const std::filesystem::path& path, Metadata* meta = nullptr);
FilterModel load_filter(const std::filesystem::path& path, Metadata* meta = nullptr);

}  // namespace atnlab
