#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "atnlab/data.hpp"
#include "atnlab/losses.hpp"
#include "atnlab/nets.hpp"
#include "atnlab/robust.hpp"

namespace atnlab {

/// Gradient-attack hyperparameters. Budgets and step sizes are in pixels on
/// the [0, 255] scale.
struct AttackConfig {
    float epsilon = 16.0f;
    int steps = 10;
    float alpha = 3.2f;  // 2 * epsilon / steps
    float mu = 1.0f;

    void validate() const;
};

/// d CE(softmax(f(x)), label) / dx for a batch, labels one per image.
Tensor cross_entropy_input_grad(const ClassifierModel& model, const Tensor& images, const std::vector<int>& labels);

/// One-step sign attack on the clean predicted label.
Tensor fgsm(const ClassifierModel& model, const Tensor& images, const AttackConfig& cfg);

/// Iterated sign steps projected onto the eps-ball and pixel range, from x
/// (no random start). When `trajectory` is given, each iterate is appended.
Tensor pgd(const ClassifierModel& model, const Tensor& images, const AttackConfig& cfg,
           std::vector<Tensor>* trajectory = nullptr);

/// Momentum iterative sign attack with per-image L1-normalized gradients.
Tensor mi_fgsm(const ClassifierModel& model, const Tensor& images, const AttackConfig& cfg,
               std::vector<Tensor>* trajectory = nullptr);

/// What the generator is trained to minimize for one batch.
struct AtnObjective {
    LossConfig loss;
    RobustConfig robust;
    std::vector<const ClassifierModel*> targets;
    float epsilon = 16.0f;
    bool apply_threshold = false;
};

struct AtnBatchGrad {
    double loss = 0.0;                      // batch mean of the fused loss
    std::vector<double> per_target_loss;    // batch means before weighting
    std::map<std::string, Tensor> generator;
    std::map<std::string, Tensor> filter;   // training-filter branch only
    EnhanceBranch branch = EnhanceBranch::Identity;
};

/// Loss and gradients for one batch. `reference_labels[n][b]` is target n's
/// reference class for image b: argmax on the clean image for the prediction
/// loss, the true label for the true-label baseline; unused for the feature
/// loss.
AtnBatchGrad atn_batch_gradients(const GeneratorModel& gen, const AtnObjective& objective, const Tensor& images,
                                 const std::vector<std::vector<int>>& reference_labels, RngStream& rng,
                                 bool filter_grads = false);

struct AtnTrainConfig {
    LossConfig loss;
    RobustConfig robust;
    std::vector<const ClassifierModel*> targets;  // frozen
    float epsilon = 16.0f;
    float learning_rate = 1e-3f;
    float filter_learning_rate = 1e-3f;
    int epochs = 5;
    int batch_size = 32;
    std::uint64_t seed = 1;
    std::size_t monitor_images = 256;  // images used for the per-epoch fooling rate

    void validate() const;
};

struct AtnEpochLog {
    int epoch = 0;
    double loss = 0.0;
    double fooling_rate = 0.0;  // white-box, against the first target, eval phase
};

struct TrainingLog {
    std::vector<AtnEpochLog> epochs;
};

/// Trains `gen` in place. The threshold gamma is applied only with two or
/// more targets.
TrainingLog train_atn(GeneratorModel& gen, const AtnTrainConfig& cfg, const Dataset& data);

/// Non-targeted variant of the original ATN objective: minimize the true
/// label's probability, no threshold, no robust-enhance module.
TrainingLog atn_modified_baseline(GeneratorModel& gen, const ClassifierModel& target, const Dataset& data,
                                  AtnTrainConfig cfg);

}  // namespace atnlab
