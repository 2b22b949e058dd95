#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "atnlab/data.hpp"
#include "atnlab/nets.hpp"
#include "atnlab/rng.hpp"

namespace atnlab {

enum class RobustMode { None, RandomNoise, PretrainedFilter, TrainingFilter };
enum class Phase { Train, Eval };

std::string_view to_string(RobustMode mode);
RobustMode parse_robust_mode(std::string_view text);

struct RobustConfig {
    RobustMode mode = RobustMode::None;
    float beta = 6.0f;  // mean absolute noise, pixels on [0, 255]
    std::shared_ptr<FilterModel> filter;
    std::uint64_t seed = 0;
    float filter_choice_prob = 0.5f;

    void validate() const;
};

/// clip(x + u) with u uniform on [-2 beta, 2 beta] per element.
Tensor apply_random_noise(const Tensor& image, float beta, RngStream& rng);
/// clip(filter(x)).
Tensor apply_filter(const Tensor& image, const FilterModel& filter);

enum class EnhanceBranch { Identity, Noise, Filter };

/// One robust-enhance pass with everything needed to backpropagate through it.
struct EnhancedBatch {
    Tensor output;
    EnhanceBranch branch = EnhanceBranch::Identity;
    std::vector<std::uint8_t> pass;  // 1 where the final pixel clamp was inactive
    Activations filter_acts;
};

EnhancedBatch robust_enhance_with_cache(const Tensor& image, const RobustConfig& cfg, RngStream& rng, Phase phase);
Tensor robust_enhance(const Tensor& image, const RobustConfig& cfg, RngStream& rng, Phase phase);

/// Draws the noise-or-filter branch for one batch. Same rule robust_enhance
/// uses, exposed so two paths can share the choice.
EnhanceBranch choose_branch(const RobustConfig& cfg, RngStream& rng, Phase phase);
EnhancedBatch enhance_on_branch(const Tensor& image, const RobustConfig& cfg, EnhanceBranch branch, RngStream& rng);

struct EnhanceGrad {
    Tensor input;
    std::map<std::string, Tensor> filter_params;  // filled for the filter branch when requested
};

EnhanceGrad robust_enhance_backward(const EnhancedBatch& batch, const RobustConfig& cfg, const Tensor& grad_out,
                                    bool filter_param_grads);

struct FilterTrainConfig {
    int epochs = 2;
    int batch_size = 32;
    float learning_rate = 0.01f;
    float noise_beta = 6.0f;
    std::uint64_t seed = 7;
};

/// Trains a filter as a denoiser: minimize mean |filter(x + u) - x| with u the
/// robust-enhance noise. Returns the mean loss per epoch.
std::vector<double> pretrain_filter(FilterModel& filter, const Dataset& data, const FilterTrainConfig& cfg);

}  // namespace atnlab
