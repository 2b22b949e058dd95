#pragma once

#include <map>
#include <string>

#include "atnlab/graph.hpp"

namespace atnlab {

/// Plain stochastic gradient descent, with optional heavy-ball momentum.
class Sgd {
public:
    explicit Sgd(float learning_rate, float momentum = 0.0f);

    /// params -= lr * grad (descent) or params += lr * grad (ascent).
    void step(ParameterStore& params, const std::map<std::string, Tensor>& grads, bool ascend = false);

    float learning_rate() const noexcept { return lr_; }

private:
    float lr_;
    float momentum_;
    std::map<std::string, std::vector<float>> velocity_;
};

}  // namespace atnlab
