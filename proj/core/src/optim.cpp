#include "atnlab/optim.hpp"

#include "atnlab/error.hpp"

namespace atnlab {

Sgd::Sgd(float learning_rate, float momentum) : lr_(learning_rate), momentum_(momentum) {
    require(learning_rate > 0.0f, ErrorCode::InvalidArgument, "learning rate must be positive");
    require(momentum >= 0.0f && momentum < 1.0f, ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
}

void Sgd::step(ParameterStore& params, const std::map<std::string, Tensor>& grads, bool ascend) {
    const float direction = ascend ? 1.0f : -1.0f;
    for (const auto& [name, grad] : grads) {
        Tensor& p = params.at(name);
        require(p.shape() == grad.shape(), ErrorCode::ShapeMismatch, "gradient shape mismatch for '" + name + "'");
        if (momentum_ == 0.0f) {
            for (std::size_t i = 0; i < p.numel(); ++i) {
                p[i] += direction * lr_ * grad[i];
            }
            continue;
        }
        auto& v = velocity_[name];
        if (v.empty()) {
            v.assign(p.numel(), 0.0f);
        }
        for (std::size_t i = 0; i < p.numel(); ++i) {
            v[i] = momentum_ * v[i] + grad[i];
            p[i] += direction * lr_ * v[i];
        }
    }
}

}  // namespace atnlab
