#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "atnlab/tensor.hpp"

namespace atnlab {

using NodeId = std::size_t;

enum class OpKind {
    Input,
    Dense,          // affine map over the flattened trailing axes
    Conv2d,         // square kernel, zero padding, stride 1 or 2
    Relu,
    MaxPool2,       // 2x2 window, stride 2
    GlobalAvgPool,  // [B,C,H,W] -> [B,C]
    Softmax,        // last axis
    Add,
    Clip,
    L1MeanDistance,  // per-sample mean |a - b| -> [B,1]
    WeightedSum,
    Tanh,
    ScaleShift,
    Upsample,  // nearest neighbour to a fixed spatial size
    Margin,    // signed top-2 probability margin against a reference label -> [B,1]
    Floor,     // max(floor, x)
};

std::string_view to_string(OpKind kind);

struct OpAttrs {
    int stride = 1;
    int pad = 0;
    float lo = 0.0f;
    float hi = 0.0f;
    float scale = 1.0f;
    float shift = 0.0f;
    float floor = 0.0f;
    std::vector<float> weights;
    std::int64_t out_h = 0;
    std::int64_t out_w = 0;
    std::vector<std::int64_t> labels;
};

struct Node {
    OpKind kind = OpKind::Input;
    std::vector<NodeId> inputs;
    std::vector<std::string> params;
    OpAttrs attrs;
    std::string name;
};

/// Named parameter tensors. Iteration order is the lexicographic name order,
/// which is what serialization and gradient checks rely on.
class ParameterStore {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return tensors_.contains(name); }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t total_elements() const noexcept;

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::map<std::string, Tensor> tensors_;
};

/// Cached node values from one forward evaluation. Values are stored with a
/// leading batch axis; `batched` records whether the caller supplied one.
struct Activations {
    std::vector<Tensor> values;
    bool batched = false;

    /// Value of `node` in the caller's convention (batch axis dropped when the
    /// input was a single unbatched sample).
    Tensor at(NodeId node) const;
    const Tensor& raw(NodeId node) const { return values.at(node); }
};

struct GradResult {
    std::map<std::string, Tensor> params;
    Tensor input;
};

struct GradSeed {
    NodeId node;
    Tensor grad;  // in the caller's convention, like Activations::at
};

class ComputeGraph {
public:
    /// `sample_shape` is the shape of one input sample; forward accepts either
    /// exactly that shape or a batch of them with a leading axis.
    explicit ComputeGraph(Shape sample_shape);

    const Shape& sample_shape() const noexcept { return sample_shape_; }
    NodeId input() const noexcept { return 0; }
    NodeId output() const noexcept { return output_; }
    void set_output(NodeId node);

    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    const Node& node(NodeId id) const { return nodes_.at(id); }

    ParameterStore& params() noexcept { return params_; }
    const ParameterStore& params() const noexcept { return params_; }

    NodeId add_node(Node node);

    NodeId dense(NodeId in, const std::string& weight, const std::string& bias, std::string name = {});
    NodeId conv2d(NodeId in, const std::string& weight, const std::string& bias, int stride, int pad,
                  std::string name = {});
    NodeId relu(NodeId in, std::string name = {});
    NodeId max_pool2(NodeId in, std::string name = {});
    NodeId global_avg_pool(NodeId in, std::string name = {});
    NodeId softmax(NodeId in, std::string name = {});
    NodeId add(NodeId a, NodeId b, std::string name = {});
    NodeId clip(NodeId in, float lo, float hi, std::string name = {});
    NodeId l1_mean_distance(NodeId a, NodeId b, std::string name = {});
    NodeId weighted_sum(std::vector<NodeId> in, std::vector<float> weights, std::string name = {});
    NodeId tanh(NodeId in, std::string name = {});
    NodeId scale_shift(NodeId in, float scale, float shift, std::string name = {});
    NodeId upsample(NodeId in, std::int64_t out_h, std::int64_t out_w, std::string name = {});
    NodeId margin(NodeId probs, std::vector<std::int64_t> labels, std::string name = {});
    NodeId floor(NodeId in, float floor, std::string name = {});

    Activations run(const Tensor& input) const;
    Tensor forward(const Tensor& input) const { return run(input).at(output_); }

    /// Reverse-mode gradients of <output_grad, output>.
    GradResult backward(const Activations& acts, const Tensor& output_grad, bool param_grads = true) const;
    /// Reverse-mode gradients seeded at arbitrary nodes; seeds are summed.
    GradResult backward(const Activations& acts, std::span<const GradSeed> seeds,
                        bool param_grads = true) const;

private:
    Shape sample_shape_;
    std::vector<Node> nodes_;
    ParameterStore params_;
    NodeId output_ = 0;
};

// Free-function spellings of the core contract.
Tensor forward(const ComputeGraph& graph, const Tensor& input);
GradResult backward(const ComputeGraph& graph, const Activations& acts, const Tensor& output_grad);

/// Maximum relative error between reverse-mode gradients and central finite
/// differences (64-bit) over every parameter and input element. Relative error
/// is |a - b| / max(|a|, |b|, 1e-6). The graph output must be shape [1].
double grad_check(const ComputeGraph& graph, const Tensor& input, double step);

}  // namespace atnlab
