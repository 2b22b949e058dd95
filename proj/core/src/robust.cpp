#include "atnlab/robust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "atnlab/budget.hpp"
#include "atnlab/error.hpp"
#include "atnlab/optim.hpp"

namespace atnlab {

namespace {

Tensor clamp_pixels(Tensor pre, std::vector<std::uint8_t>& pass) {
    pass.resize(pre.numel());
    for (std::size_t i = 0; i < pre.numel(); ++i) {
        pass[i] = pre[i] > kPixelMin && pre[i] < kPixelMax;
        pre[i] = std::clamp(pre[i], kPixelMin, kPixelMax);
    }
    return pre;
}

bool uses_filter(RobustMode mode) {
    return mode == RobustMode::PretrainedFilter || mode == RobustMode::TrainingFilter;
}

}  // namespace

std::string_view to_string(RobustMode mode) {
    switch (mode) {
        case RobustMode::None: return "none";
        case RobustMode::RandomNoise: return "noise";
        case RobustMode::PretrainedFilter: return "pretrained-filter";
        case RobustMode::TrainingFilter: return "training-filter";
    }
    return "none";
}

RobustMode parse_robust_mode(std::string_view text) {
    if (text == "none") return RobustMode::None;
    if (text == "noise" || text == "random_noise") return RobustMode::RandomNoise;
    if (text == "pretrained-filter" || text == "pretrained_filter") return RobustMode::PretrainedFilter;
    if (text == "training-filter" || text == "training_filter") return RobustMode::TrainingFilter;
    fail(ErrorCode::InvalidArgument,
         "unknown robust mode '" + std::string(text) + "'; expected none, noise, pretrained-filter or training-filter");
}

void RobustConfig::validate() const {
    require(beta >= 0.0f && std::isfinite(beta), ErrorCode::InvalidArgument, "beta must be >= 0");
    require(filter_choice_prob >= 0.0f && filter_choice_prob <= 1.0f, ErrorCode::InvalidArgument,
            "filter_choice_prob must be in [0, 1]");
    if (uses_filter(mode)) {
        require(filter != nullptr, ErrorCode::MissingFilter,
                "robust mode " + std::string(to_string(mode)) + " requires a filter network");
    }
}

Tensor apply_random_noise(const Tensor& image, float beta, RngStream& rng) {
    require(beta >= 0.0f, ErrorCode::InvalidArgument, "beta must be >= 0");
    Tensor out = image;
    const double amplitude = 2.0 * beta;
    for (auto& v : out.data()) {
        v = std::clamp(v + static_cast<float>(rng.uniform(-amplitude, amplitude)), kPixelMin, kPixelMax);
    }
    return out;
}

Tensor apply_filter(const Tensor& image, const FilterModel& filter) {
    std::vector<std::uint8_t> pass;
    return clamp_pixels(filter.graph.forward(image), pass);
}

EnhanceBranch choose_branch(const RobustConfig& cfg, RngStream& rng, Phase phase) {
    if (phase == Phase::Eval) {
        return EnhanceBranch::Identity;
    }
    switch (cfg.mode) {
        case RobustMode::None: return EnhanceBranch::Identity;
        case RobustMode::RandomNoise: return EnhanceBranch::Noise;
        case RobustMode::PretrainedFilter:
        case RobustMode::TrainingFilter:
            // Degenerate probabilities draw nothing, so prob 0 replays the noise-only stream.
            if (cfg.filter_choice_prob <= 0.0f) {
                return EnhanceBranch::Noise;
            }
            if (cfg.filter_choice_prob >= 1.0f) {
                return EnhanceBranch::Filter;
            }
            return rng.bernoulli(cfg.filter_choice_prob) ? EnhanceBranch::Filter : EnhanceBranch::Noise;
    }
    return EnhanceBranch::Identity;
}

EnhancedBatch enhance_on_branch(const Tensor& image, const RobustConfig& cfg, EnhanceBranch branch, RngStream& rng) {
    EnhancedBatch out;
    out.branch = branch;
    switch (branch) {
        case EnhanceBranch::Identity:
            out.output = image;
            out.pass.assign(image.numel(), 1);
            break;
        case EnhanceBranch::Noise: {
            Tensor pre = image;
            const double amplitude = 2.0 * cfg.beta;
            for (auto& v : pre.data()) {
                v += static_cast<float>(rng.uniform(-amplitude, amplitude));
            }
            out.output = clamp_pixels(std::move(pre), out.pass);
            break;
        }
        case EnhanceBranch::Filter:
            require(cfg.filter != nullptr, ErrorCode::MissingFilter, "filter branch without a filter network");
            out.filter_acts = cfg.filter->graph.run(image);
            out.output = clamp_pixels(out.filter_acts.at(cfg.filter->graph.output()), out.pass);
            break;
    }
    return out;
}

EnhancedBatch robust_enhance_with_cache(const Tensor& image, const RobustConfig& cfg, RngStream& rng, Phase phase) {
    cfg.validate();
    return enhance_on_branch(image, cfg, choose_branch(cfg, rng, phase), rng);
}

Tensor robust_enhance(const Tensor& image, const RobustConfig& cfg, RngStream& rng, Phase phase) {
    return robust_enhance_with_cache(image, cfg, rng, phase).output;
}

EnhanceGrad robust_enhance_backward(const EnhancedBatch& batch, const RobustConfig& cfg, const Tensor& grad_out,
                                    bool filter_param_grads) {
    require(grad_out.shape() == batch.output.shape(), ErrorCode::ShapeMismatch,
            "robust-enhance gradient shape " + grad_out.shape().to_string() + " vs " +
                batch.output.shape().to_string());
    Tensor masked = grad_out;
    for (std::size_t i = 0; i < masked.numel(); ++i) {
        if (!batch.pass[i]) {
            masked[i] = 0.0f;
        }
    }
    EnhanceGrad out;
    if (batch.branch != EnhanceBranch::Filter) {
        out.input = std::move(masked);
        return out;
    }
    GradResult g = cfg.filter->graph.backward(batch.filter_acts, masked, filter_param_grads);
    out.input = std::move(g.input);
    out.filter_params = std::move(g.params);
    return out;
}

std::vector<double> pretrain_filter(FilterModel& filter, const Dataset& data, const FilterTrainConfig& cfg) {
    require(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorCode::InvalidArgument, "epochs and batch size must be >= 1");
    Sgd opt(cfg.learning_rate);
    RngStream rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[rng.below(i + 1)]);
        }
        double total = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const Tensor clean = data.subset(std::span<const std::size_t>(order).subspan(begin, end - begin)).images;
            const Tensor noisy = apply_random_noise(clean, cfg.noise_beta, rng);
            const Activations acts = filter.graph.run(noisy);
            const Tensor& out = acts.raw(filter.graph.output());
            Tensor grad(out.shape());
            const auto n = static_cast<float>(out.numel());
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const float d = out[i] - clean[i];
                total += std::abs(d) / static_cast<double>(out.numel()) * static_cast<double>(end - begin);
                grad[i] = (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f)) / n;
            }
            opt.step(filter.graph.params(), filter.graph.backward(acts, grad, true).params);
        }
        losses.push_back(total / static_cast<double>(data.size()));
    }
    return losses;
}

}  // namespace atnlab
