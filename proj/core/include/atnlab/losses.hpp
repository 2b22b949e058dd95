#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "atnlab/graph.hpp"
#include "atnlab/tensor.hpp"

namespace atnlab {

enum class LossKind {
    Feature,     // 1 - mean |k_f(x) - k_f(x')|
    Prediction,  // signed top-2 margin against the clean label
    TrueLabel,   // probability of the true label (non-targeted ATN baseline)
};

struct LossConfig {
    LossKind kind = LossKind::Prediction;
    float gamma = -0.9f;         // only used for prediction loss against several targets
    std::vector<float> weights;  // one per target, all > 0

    void validate() const;
};

struct PredictionSummary {
    std::vector<float> probs;
    std::size_t fir = 0;
    std::size_t sec = 1;
    float p_fir = 0.0f;
    float p_sec = 0.0f;
};

/// Indices of the two largest probabilities; ties go to the lower index.
PredictionSummary top2(std::span<const float> probs);

/// Scalar loss value with its gradient with respect to the differentiated
/// argument.
struct LossGrad {
    float value = 0.0f;
    Tensor grad;
};

/// 1 - mean |clean - adv|; gradient is with respect to `adv`.
LossGrad loss_feature(const Tensor& feat_clean, const Tensor& feat_adv);

/// p_fir - p_sec when clean_label is the top class of `probs_adv`, otherwise
/// p_sec - p_fir. The top-2 indices are constants of the forward pass.
LossGrad loss_prediction(int clean_label, std::span<const float> probs_adv);

struct ThresholdGrad {
    float value = 0.0f;
    float slope = 0.0f;  // 1 above gamma, 0 at or below
};
ThresholdGrad loss_threshold(float l_p, float gamma);

/// Sum of w_n * l_n; the gradient with respect to l_n is w_n.
float loss_ensemble(std::span<const float> losses, std::span<const float> weights);

// Differentiable graph fragments of the same losses.
NodeId append_feature_loss(ComputeGraph& graph, NodeId feat_clean, NodeId feat_adv);
NodeId append_prediction_loss(ComputeGraph& graph, NodeId probs, std::vector<std::int64_t> clean_labels);
NodeId append_threshold(ComputeGraph& graph, NodeId loss, float gamma);
NodeId append_ensemble(ComputeGraph& graph, std::vector<NodeId> losses, std::vector<float> weights);

}  // namespace atnlab
