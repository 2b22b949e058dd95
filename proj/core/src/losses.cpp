#include "atnlab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "atnlab/error.hpp"

namespace atnlab {

void LossConfig::validate() const {
    require(!weights.empty(), ErrorCode::InvalidArgument, "loss config needs at least one target weight");
    for (float w : weights) {
        require(w > 0.0f && std::isfinite(w), ErrorCode::InvalidArgument, "ensemble weights must be > 0");
    }
    require(gamma >= -1.0f && gamma <= 0.0f, ErrorCode::InvalidArgument, "gamma must be in [-1, 0]");
}

PredictionSummary top2(std::span<const float> probs) {
    require(probs.size() >= 2, ErrorCode::InvalidArgument, "top2 needs at least two probabilities");
    PredictionSummary s;
    s.probs.assign(probs.begin(), probs.end());
    s.fir = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[s.fir]) {
            s.fir = i;
        }
    }
    s.sec = s.fir == 0 ? 1 : 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (i != s.fir && probs[i] > probs[s.sec]) {
            s.sec = i;
        }
    }
    s.p_fir = probs[s.fir];
    s.p_sec = probs[s.sec];
    return s;
}

LossGrad loss_feature(const Tensor& feat_clean, const Tensor& feat_adv) {
    require(feat_clean.shape() == feat_adv.shape(), ErrorCode::ShapeMismatch,
            "feature loss: " + feat_clean.shape().to_string() + " vs " + feat_adv.shape().to_string());
    const auto n = static_cast<float>(feat_adv.numel());
    double sum = 0.0;
    LossGrad out{0.0f, Tensor(feat_adv.shape())};
    for (std::size_t i = 0; i < feat_adv.numel(); ++i) {
        const float d = feat_adv[i] - feat_clean[i];
        sum += std::abs(d);
        out.grad[i] = d > 0.0f ? -1.0f / n : (d < 0.0f ? 1.0f / n : 0.0f);
    }
    out.value = static_cast<float>(1.0 - sum / static_cast<double>(n));
    return out;
}

LossGrad loss_prediction(int clean_label, std::span<const float> probs_adv) {
    const PredictionSummary s = top2(probs_adv);
    require(clean_label >= 0 && static_cast<std::size_t>(clean_label) < probs_adv.size(),
            ErrorCode::InvalidArgument,
            "clean label " + std::to_string(clean_label) + " outside [0, " + std::to_string(probs_adv.size()) + ")");
    const float sign = static_cast<std::size_t>(clean_label) == s.fir ? 1.0f : -1.0f;
    LossGrad out{sign * (s.p_fir - s.p_sec), Tensor(Shape{static_cast<std::int64_t>(probs_adv.size())})};
    out.grad[s.fir] = sign;
    out.grad[s.sec] = -sign;
    return out;
}

ThresholdGrad loss_threshold(float l_p, float gamma) {
    return l_p > gamma ? ThresholdGrad{l_p, 1.0f} : ThresholdGrad{gamma, 0.0f};
}

float loss_ensemble(std::span<const float> losses, std::span<const float> weights) {
    require(losses.size() == weights.size(), ErrorCode::InvalidArgument,
            "ensemble needs one weight per loss (" + std::to_string(losses.size()) + " losses, " +
                std::to_string(weights.size()) + " weights)");
    double sum = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        require(weights[i] > 0.0f, ErrorCode::InvalidArgument, "ensemble weights must be > 0");
        sum += static_cast<double>(weights[i]) * losses[i];
    }
    return static_cast<float>(sum);
}

NodeId append_feature_loss(ComputeGraph& graph, NodeId feat_clean, NodeId feat_adv) {
    return graph.scale_shift(graph.l1_mean_distance(feat_adv, feat_clean), -1.0f, 1.0f, "feature_loss");
}

NodeId append_prediction_loss(ComputeGraph& graph, NodeId probs, std::vector<std::int64_t> clean_labels) {
    return graph.margin(probs, std::move(clean_labels), "prediction_loss");
}

NodeId append_threshold(ComputeGraph& graph, NodeId loss, float gamma) {
    return graph.floor(loss, gamma, "threshold");
}

NodeId append_ensemble(ComputeGraph& graph, std::vector<NodeId> losses, std::vector<float> weights) {
    for (float w : weights) {
        require(w > 0.0f, ErrorCode::InvalidArgument, "ensemble weights must be > 0");
    }
    return graph.weighted_sum(std::move(losses), std::move(weights), "ensemble_loss");
}

}  // namespace atnlab
