#include "atnlab/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "atnlab/error.hpp"

namespace atnlab {

namespace {

using Dims = std::vector<std::int64_t>;

template <class T>
struct Buffer {
    Dims dims;
    std::vector<T> data;
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

template <class T>
struct ParamView {
    const Dims* dims;
    const T* data;
};

std::string dims_string(const Dims& dims) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out << (i ? "," : "") << dims[i];
    }
    out << ']';
    return out.str();
}

std::size_t product(const Dims& dims) {
    std::size_t n = 1;
    for (auto d : dims) {
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string describe(const Node& node, NodeId id) {
    std::ostringstream out;
    out << "node " << id << " (" << to_string(node.kind);
    if (!node.name.empty()) {
        out << " '" << node.name << "'";
    }
    out << ")";
    return out.str();
}

[[noreturn]] void shape_error(const Node& node, NodeId id, const std::string& expected, const Dims& actual) {
    fail(ErrorCode::ShapeMismatch,
         describe(node, id) + ": expected " + expected + ", got " + dims_string(actual));
}

struct ConvGeometry {
    std::int64_t batch, channels, height, width;
    std::int64_t out_channels, kernel, stride, pad;
    std::int64_t out_h, out_w;

    std::int64_t patch() const { return channels * kernel * kernel; }
    std::int64_t positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Node& node, NodeId id, const Dims& x, const Dims& w) {
    if (x.size() != 4) {
        shape_error(node, id, "rank-4 input [B,C,H,W]", x);
    }
    if (w.size() != 4 || w[2] != w[3]) {
        shape_error(node, id, "square kernel weight [O,C,k,k]", w);
    }
    if (w[1] != x[1]) {
        shape_error(node, id, "input with " + std::to_string(w[1]) + " channels", x);
    }
    ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], node.attrs.stride, node.attrs.pad, 0, 0};
    g.out_h = (g.height + 2 * g.pad - g.kernel) / g.stride + 1;
    g.out_w = (g.width + 2 * g.pad - g.kernel) / g.stride + 1;
    if (g.height + 2 * g.pad < g.kernel || g.width + 2 * g.pad < g.kernel) {
        shape_error(node, id, "spatial extent at least the kernel size " + std::to_string(g.kernel), x);
    }
    return g;
}

// col has shape [C*k*k, B*OH*OW]; column index is b*OH*OW + oh*OW + ow.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::int64_t cols = g.batch * g.positions();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                const std::int64_t row = (c * g.kernel + ki) * g.kernel + kj;
                T* dst = col + row * cols;
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    const T* img = x + (b * g.channels + c) * g.height * g.width;
                    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                        const std::int64_t ih = oh * g.stride - g.pad + ki;
                        T* out = dst + b * g.positions() + oh * g.out_w;
                        if (ih < 0 || ih >= g.height) {
                            std::fill(out, out + g.out_w, T{0});
                            continue;
                        }
                        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                            const std::int64_t iw = ow * g.stride - g.pad + kj;
                            out[ow] = (iw < 0 || iw >= g.width) ? T{0} : img[ih * g.width + iw];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const float* col, float* dx) {
    const std::int64_t cols = g.batch * g.positions();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                const std::int64_t row = (c * g.kernel + ki) * g.kernel + kj;
                const float* src = col + row * cols;
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    float* img = dx + (b * g.channels + c) * g.height * g.width;
                    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                        const std::int64_t ih = oh * g.stride - g.pad + ki;
                        if (ih < 0 || ih >= g.height) {
                            continue;
                        }
                        const float* in = src + b * g.positions() + oh * g.out_w;
                        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                            const std::int64_t iw = ow * g.stride - g.pad + kj;
                            if (iw >= 0 && iw < g.width) {
                                img[ih * g.width + iw] += in[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Top-two indices of a probability row, lower index first on ties.
template <class T>
std::pair<std::size_t, std::size_t> top_two(const T* p, std::size_t n) {
    std::size_t fir = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (p[i] > p[fir]) {
            fir = i;
        }
    }
    std::size_t sec = fir == 0 ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i != fir && p[i] > p[sec]) {
            sec = i;
        }
    }
    return {fir, sec};
}

template <class T, class ParamFn>
std::vector<Buffer<T>> evaluate(const std::vector<Node>& nodes, Buffer<T> input, ParamFn&& param) {
    std::vector<Buffer<T>> vals(nodes.size());
    vals[0] = std::move(input);
    for (NodeId id = 1; id < nodes.size(); ++id) {
        const Node& node = nodes[id];
        const auto& a = node.attrs;
        const Buffer<T>& x = vals[node.inputs.at(0)];
        const std::int64_t batch = x.dims[0];
        Buffer<T>& y = vals[id];
        switch (node.kind) {
            case OpKind::Input:
                fail(ErrorCode::InvalidArgument, describe(node, id) + ": input node must be first");
            case OpKind::Dense: {
                const ParamView<T> w = param(node.params.at(0));
                const ParamView<T> bias = param(node.params.at(1));
                const std::int64_t features = static_cast<std::int64_t>(x.data.size()) / batch;
                if (w.dims->size() != 2 || (*w.dims)[1] != features) {
                    shape_error(node, id, std::to_string(features) + " input features for weight " +
                                              dims_string(*w.dims), x.dims);
                }
                const std::int64_t out = (*w.dims)[0];
                y.dims = {batch, out};
                y.data.assign(static_cast<std::size_t>(batch * out), T{0});
                ConstMap<T> xm(x.data.data(), batch, features);
                ConstMap<T> wm(w.data, out, features);
                MutMap<T> ym(y.data.data(), batch, out);
                ym.noalias() = xm * wm.transpose();
                for (std::int64_t b = 0; b < batch; ++b) {
                    for (std::int64_t o = 0; o < out; ++o) {
                        ym(b, o) += bias.data[o];
                    }
                }
                break;
            }
            case OpKind::Conv2d: {
                const ParamView<T> w = param(node.params.at(0));
                const ParamView<T> bias = param(node.params.at(1));
                const ConvGeometry g = conv_geometry(node, id, x.dims, *w.dims);
                std::vector<T> col(static_cast<std::size_t>(g.patch() * g.batch * g.positions()));
                im2col(g, x.data.data(), col.data());
                RowMat<T> prod = ConstMap<T>(w.data, g.out_channels, g.patch()) *
                                 ConstMap<T>(col.data(), g.patch(), g.batch * g.positions());
                y.dims = {g.batch, g.out_channels, g.out_h, g.out_w};
                y.data.resize(product(y.dims));
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    for (std::int64_t o = 0; o < g.out_channels; ++o) {
                        const T* src = prod.data() + o * g.batch * g.positions() + b * g.positions();
                        T* dst = y.data.data() + (b * g.out_channels + o) * g.positions();
                        for (std::int64_t p = 0; p < g.positions(); ++p) {
                            dst[p] = src[p] + bias.data[o];
                        }
                    }
                }
                break;
            }
            case OpKind::Relu:
                y.dims = x.dims;
                y.data.resize(x.data.size());
                std::transform(x.data.begin(), x.data.end(), y.data.begin(),
                               [](T v) { return v > T{0} ? v : T{0}; });
                break;
            case OpKind::Tanh:
                y.dims = x.dims;
                y.data.resize(x.data.size());
                std::transform(x.data.begin(), x.data.end(), y.data.begin(), [](T v) { return std::tanh(v); });
                break;
            case OpKind::ScaleShift: {
                y.dims = x.dims;
                y.data.resize(x.data.size());
                const T s = a.scale, t = a.shift;
                std::transform(x.data.begin(), x.data.end(), y.data.begin(), [=](T v) { return s * v + t; });
                break;
            }
            case OpKind::Clip: {
                y.dims = x.dims;
                y.data.resize(x.data.size());
                const T lo = a.lo, hi = a.hi;
                std::transform(x.data.begin(), x.data.end(), y.data.begin(),
                               [=](T v) { return std::clamp(v, lo, hi); });
                break;
            }
            case OpKind::Floor: {
                y.dims = x.dims;
                y.data.resize(x.data.size());
                const T f = a.floor;
                std::transform(x.data.begin(), x.data.end(), y.data.begin(), [=](T v) { return std::max(f, v); });
                break;
            }
            case OpKind::MaxPool2: {
                if (x.dims.size() != 4 || x.dims[2] < 2 || x.dims[3] < 2) {
                    shape_error(node, id, "rank-4 input with spatial extent >= 2", x.dims);
                }
                const std::int64_t c = x.dims[1], h = x.dims[2], w = x.dims[3];
                const std::int64_t oh = h / 2, ow = w / 2;
                y.dims = {batch, c, oh, ow};
                y.data.resize(product(y.dims));
                for (std::int64_t plane = 0; plane < batch * c; ++plane) {
                    const T* src = x.data.data() + plane * h * w;
                    T* dst = y.data.data() + plane * oh * ow;
                    for (std::int64_t i = 0; i < oh; ++i) {
                        for (std::int64_t j = 0; j < ow; ++j) {
                            const T* p = src + 2 * i * w + 2 * j;
                            dst[i * ow + j] = std::max(std::max(p[0], p[1]), std::max(p[w], p[w + 1]));
                        }
                    }
                }
                break;
            }
            case OpKind::GlobalAvgPool: {
                if (x.dims.size() != 4) {
                    shape_error(node, id, "rank-4 input [B,C,H,W]", x.dims);
                }
                const std::int64_t c = x.dims[1], hw = x.dims[2] * x.dims[3];
                y.dims = {batch, c};
                y.data.resize(static_cast<std::size_t>(batch * c));
                for (std::int64_t plane = 0; plane < batch * c; ++plane) {
                    const T* src = x.data.data() + plane * hw;
                    T sum{0};
                    for (std::int64_t i = 0; i < hw; ++i) {
                        sum += src[i];
                    }
                    y.data[plane] = sum / static_cast<T>(hw);
                }
                break;
            }
            case OpKind::Softmax: {
                y.dims = x.dims;
                y.data.resize(x.data.size());
                const auto n = static_cast<std::size_t>(x.dims.back());
                for (std::size_t r = 0; r < x.data.size() / n; ++r) {
                    const T* src = x.data.data() + r * n;
                    T* dst = y.data.data() + r * n;
                    const T peak = *std::max_element(src, src + n);
                    T sum{0};
                    for (std::size_t i = 0; i < n; ++i) {
                        dst[i] = std::exp(src[i] - peak);
                        sum += dst[i];
                    }
                    for (std::size_t i = 0; i < n; ++i) {
                        dst[i] /= sum;
                    }
                }
                break;
            }
            case OpKind::Add: {
                const Buffer<T>& z = vals[node.inputs.at(1)];
                if (z.dims != x.dims) {
                    shape_error(node, id, dims_string(x.dims), z.dims);
                }
                y.dims = x.dims;
                y.data.resize(x.data.size());
                for (std::size_t i = 0; i < x.data.size(); ++i) {
                    y.data[i] = x.data[i] + z.data[i];
                }
                break;
            }
            case OpKind::L1MeanDistance: {
                const Buffer<T>& z = vals[node.inputs.at(1)];
                if (z.dims != x.dims) {
                    shape_error(node, id, dims_string(x.dims), z.dims);
                }
                const std::size_t per = x.data.size() / static_cast<std::size_t>(batch);
                y.dims = {batch, 1};
                y.data.assign(static_cast<std::size_t>(batch), T{0});
                for (std::int64_t b = 0; b < batch; ++b) {
                    T sum{0};
                    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                        sum += std::abs(x.data[i] - z.data[i]);
                    }
                    y.data[b] = sum / static_cast<T>(per);
                }
                break;
            }
            case OpKind::WeightedSum: {
                y.dims = x.dims;
                y.data.assign(x.data.size(), T{0});
                for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                    const Buffer<T>& z = vals[node.inputs[k]];
                    if (z.dims != x.dims) {
                        shape_error(node, id, dims_string(x.dims), z.dims);
                    }
                    const T w = a.weights[k];
                    for (std::size_t i = 0; i < z.data.size(); ++i) {
                        y.data[i] += w * z.data[i];
                    }
                }
                break;
            }
            case OpKind::Upsample: {
                if (x.dims.size() != 4) {
                    shape_error(node, id, "rank-4 input [B,C,H,W]", x.dims);
                }
                const std::int64_t c = x.dims[1], h = x.dims[2], w = x.dims[3];
                y.dims = {batch, c, a.out_h, a.out_w};
                y.data.resize(product(y.dims));
                for (std::int64_t plane = 0; plane < batch * c; ++plane) {
                    const T* src = x.data.data() + plane * h * w;
                    T* dst = y.data.data() + plane * a.out_h * a.out_w;
                    for (std::int64_t i = 0; i < a.out_h; ++i) {
                        const std::int64_t si = i * h / a.out_h;
                        for (std::int64_t j = 0; j < a.out_w; ++j) {
                            dst[i * a.out_w + j] = src[si * w + j * w / a.out_w];
                        }
                    }
                }
                break;
            }
            case OpKind::Margin: {
                if (x.dims.size() != 2 || x.dims[1] < 2) {
                    shape_error(node, id, "probabilities [B,N] with N >= 2", x.dims);
                }
                if (static_cast<std::int64_t>(a.labels.size()) != batch) {
                    fail(ErrorCode::ShapeMismatch, describe(node, id) + ": expected " +
                                                       std::to_string(batch) + " reference labels, got " +
                                                       std::to_string(a.labels.size()));
                }
                const auto n = static_cast<std::size_t>(x.dims[1]);
                y.dims = {batch, 1};
                y.data.resize(static_cast<std::size_t>(batch));
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* p = x.data.data() + b * n;
                    const auto [fir, sec] = top_two(p, n);
                    const T m = p[fir] - p[sec];
                    y.data[b] = static_cast<std::size_t>(a.labels[b]) == fir ? m : -m;
                }
                break;
            }
        }
    }
    return vals;
}

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

}  // namespace

std::string_view to_string(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Dense: return "dense";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Relu: return "relu";
        case OpKind::MaxPool2: return "max_pool2";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::Softmax: return "softmax";
        case OpKind::Add: return "add";
        case OpKind::Clip: return "clip";
        case OpKind::L1MeanDistance: return "l1_mean_distance";
        case OpKind::WeightedSum: return "weighted_sum";
        case OpKind::Tanh: return "tanh";
        case OpKind::ScaleShift: return "scale_shift";
        case OpKind::Upsample: return "upsample";
        case OpKind::Margin: return "margin";
        case OpKind::Floor: return "floor";
    }
    return "unknown";
}

void ParameterStore::add(const std::string& name, Tensor value) {
    require(!tensors_.contains(name), ErrorCode::InvalidArgument, "duplicate parameter '" + name + "'");
    tensors_.emplace(name, std::move(value));
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), ErrorCode::InvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), ErrorCode::InvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterStore::total_elements() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) {
        n += t.numel();
    }
    return n;
}

Tensor Activations::at(NodeId node) const {
    const Tensor& v = values.at(node);
    if (batched || v.shape().rank() == 1) {
        return v;
    }
    return v.reshaped(v.shape().drop_front());
}

ComputeGraph::ComputeGraph(Shape sample_shape) : sample_shape_(std::move(sample_shape)) {
    require(sample_shape_.rank() >= 1 && sample_shape_.rank() <= 3, ErrorCode::InvalidArgument,
            "graph sample shape must have rank 1..3, got " + sample_shape_.to_string());
    nodes_.push_back(Node{OpKind::Input, {}, {}, {}, "input"});
}

void ComputeGraph::set_output(NodeId node) {
    require(node < nodes_.size(), ErrorCode::InvalidArgument, "output node out of range");
    output_ = node;
}

NodeId ComputeGraph::add_node(Node node) {
    const NodeId id = nodes_.size();
    require(node.kind != OpKind::Input, ErrorCode::InvalidArgument, "only one input node is allowed");
    require(!node.inputs.empty(), ErrorCode::InvalidArgument, describe(node, id) + ": node has no inputs");
    for (NodeId in : node.inputs) {
        require(in < id, ErrorCode::InvalidArgument,
                describe(node, id) + ": input " + std::to_string(in) + " does not precede the node");
    }
    for (const auto& p : node.params) {
        require(params_.contains(p), ErrorCode::InvalidArgument,
                describe(node, id) + ": parameter '" + p + "' is not in the store");
    }
    const std::size_t arity = node.inputs.size();
    switch (node.kind) {
        case OpKind::Dense:
        case OpKind::Conv2d:
            require(node.params.size() == 2 && arity == 1, ErrorCode::InvalidArgument,
                    describe(node, id) + ": needs one input, a weight and a bias");
            if (node.kind == OpKind::Conv2d) {
                require(node.attrs.stride == 1 || node.attrs.stride == 2, ErrorCode::InvalidArgument,
                        describe(node, id) + ": stride must be 1 or 2");
                require(node.attrs.pad >= 0, ErrorCode::InvalidArgument, describe(node, id) + ": negative pad");
            }
            break;
        case OpKind::Add:
        case OpKind::L1MeanDistance:
            require(arity == 2, ErrorCode::InvalidArgument, describe(node, id) + ": needs two inputs");
            break;
        case OpKind::WeightedSum:
            require(node.attrs.weights.size() == arity, ErrorCode::InvalidArgument,
                    describe(node, id) + ": one weight per input required");
            break;
        case OpKind::Clip:
            require(node.attrs.lo < node.attrs.hi, ErrorCode::InvalidArgument,
                    describe(node, id) + ": clip range must satisfy lo < hi");
            break;
        case OpKind::Upsample:
            require(node.attrs.out_h > 0 && node.attrs.out_w > 0, ErrorCode::InvalidArgument,
                    describe(node, id) + ": upsample target must be positive");
            break;
        default:
            require(arity == 1, ErrorCode::InvalidArgument, describe(node, id) + ": needs one input");
            break;
    }
    nodes_.push_back(std::move(node));
    output_ = id;
    return id;
}

NodeId ComputeGraph::dense(NodeId in, const std::string& weight, const std::string& bias, std::string name) {
    return add_node(Node{OpKind::Dense, {in}, {weight, bias}, {}, std::move(name)});
}

NodeId ComputeGraph::conv2d(NodeId in, const std::string& weight, const std::string& bias, int stride, int pad,
                            std::string name) {
    OpAttrs attrs;
    attrs.stride = stride;
    attrs.pad = pad;
    return add_node(Node{OpKind::Conv2d, {in}, {weight, bias}, std::move(attrs), std::move(name)});
}

NodeId ComputeGraph::relu(NodeId in, std::string name) {
    return add_node(Node{OpKind::Relu, {in}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::max_pool2(NodeId in, std::string name) {
    return add_node(Node{OpKind::MaxPool2, {in}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::global_avg_pool(NodeId in, std::string name) {
    return add_node(Node{OpKind::GlobalAvgPool, {in}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::softmax(NodeId in, std::string name) {
    return add_node(Node{OpKind::Softmax, {in}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::add(NodeId a, NodeId b, std::string name) {
    return add_node(Node{OpKind::Add, {a, b}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::clip(NodeId in, float lo, float hi, std::string name) {
    OpAttrs attrs;
    attrs.lo = lo;
    attrs.hi = hi;
    return add_node(Node{OpKind::Clip, {in}, {}, std::move(attrs), std::move(name)});
}

NodeId ComputeGraph::l1_mean_distance(NodeId a, NodeId b, std::string name) {
    return add_node(Node{OpKind::L1MeanDistance, {a, b}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::weighted_sum(std::vector<NodeId> in, std::vector<float> weights, std::string name) {
    OpAttrs attrs;
    attrs.weights = std::move(weights);
    return add_node(Node{OpKind::WeightedSum, std::move(in), {}, std::move(attrs), std::move(name)});
}

NodeId ComputeGraph::tanh(NodeId in, std::string name) {
    return add_node(Node{OpKind::Tanh, {in}, {}, {}, std::move(name)});
}

NodeId ComputeGraph::scale_shift(NodeId in, float scale, float shift, std::string name) {
    OpAttrs attrs;
    attrs.scale = scale;
    attrs.shift = shift;
    return add_node(Node{OpKind::ScaleShift, {in}, {}, std::move(attrs), std::move(name)});
}

NodeId ComputeGraph::upsample(NodeId in, std::int64_t out_h, std::int64_t out_w, std::string name) {
    OpAttrs attrs;
    attrs.out_h = out_h;
    attrs.out_w = out_w;
    return add_node(Node{OpKind::Upsample, {in}, {}, std::move(attrs), std::move(name)});
}

NodeId ComputeGraph::margin(NodeId probs, std::vector<std::int64_t> labels, std::string name) {
    OpAttrs attrs;
    attrs.labels = std::move(labels);
    return add_node(Node{OpKind::Margin, {probs}, {}, std::move(attrs), std::move(name)});
}

NodeId ComputeGraph::floor(NodeId in, float floor, std::string name) {
    OpAttrs attrs;
    attrs.floor = floor;
    return add_node(Node{OpKind::Floor, {in}, {}, std::move(attrs), std::move(name)});
}

namespace {

// Returns the batched dims for `input`, and whether it carried a batch axis.
std::pair<Dims, bool> batched_dims(const Shape& sample, const Shape& input) {
    const auto& s = sample.dims();
    const auto& d = input.dims();
    if (d == s) {
        return {sample.prepend(1).dims(), false};
    }
    if (d.size() == s.size() + 1 && std::equal(s.begin(), s.end(), d.begin() + 1)) {
        return {d, true};
    }
    fail(ErrorCode::ShapeMismatch, "node 0 (input): expected " + sample.to_string() + " or [B," +
                                       sample.to_string().substr(1) + ", got " + input.to_string());
}

}  // namespace

Activations ComputeGraph::run(const Tensor& input) const {
    auto [dims, batched] = batched_dims(sample_shape_, input.shape());
    Buffer<float> in{std::move(dims), input.values()};
    auto vals = evaluate<float>(nodes_, std::move(in), [this](const std::string& name) {
        const Tensor& t = params_.at(name);
        return ParamView<float>{&t.shape().dims(), t.data().data()};
    });
    Activations acts;
    acts.batched = batched;
    acts.values.reserve(vals.size());
    for (auto& v : vals) {
        acts.values.emplace_back(Shape(std::move(v.dims)), std::move(v.data));
    }
    return acts;
}

GradResult ComputeGraph::backward(const Activations& acts, const Tensor& output_grad, bool param_grads) const {
    const GradSeed seed{output_, output_grad};
    return backward(acts, std::span<const GradSeed>(&seed, 1), param_grads);
}

GradResult ComputeGraph::backward(const Activations& acts, std::span<const GradSeed> seeds,
                                  bool param_grads) const {
    require(acts.values.size() == nodes_.size(), ErrorCode::InvalidArgument,
            "activations do not belong to this graph");
    std::vector<std::vector<float>> grads(nodes_.size());
    NodeId last = 0;
    for (const auto& seed : seeds) {
        const Tensor& value = acts.values.at(seed.node);
        const Tensor expected = acts.at(seed.node);
        if (seed.grad.shape() != expected.shape()) {
            fail(ErrorCode::ShapeMismatch, describe(nodes_[seed.node], seed.node) + ": output gradient expected " +
                                               expected.shape().to_string() + ", got " +
                                               seed.grad.shape().to_string());
        }
        auto& g = grads[seed.node];
        if (g.empty()) {
            g.assign(value.numel(), 0.0f);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += seed.grad[i];
        }
        last = std::max(last, seed.node);
    }

    std::map<std::string, std::vector<float>> pgrads;
    auto accumulate = [&](NodeId target, std::size_t n) -> std::vector<float>& {
        auto& g = grads[target];
        if (g.empty()) {
            g.assign(n, 0.0f);
        }
        return g;
    };
    auto param_grad = [&](const std::string& name) -> std::vector<float>& {
        auto& g = pgrads[name];
        if (g.empty()) {
            g.assign(params_.at(name).numel(), 0.0f);
        }
        return g;
    };

    for (NodeId id = last; id >= 1; --id) {
        const std::vector<float>& gy = grads[id];
        if (gy.empty()) {
            continue;
        }
        const Node& node = nodes_[id];
        const auto& a = node.attrs;
        const NodeId xi = node.inputs[0];
        const Tensor& x = acts.values[xi];
        const Tensor& y = acts.values[id];
        const auto batch = x.shape()[0];
        switch (node.kind) {
            case OpKind::Input:
                break;
            case OpKind::Dense: {
                const Tensor& w = params_.at(node.params[0]);
                const std::int64_t out = w.shape()[0];
                const std::int64_t features = w.shape()[1];
                ConstMap<float> gm(gy.data(), batch, out);
                ConstMap<float> wm(w.data().data(), out, features);
                auto& gx = accumulate(xi, x.numel());
                MutMap<float>(gx.data(), batch, features).noalias() += gm * wm;
                if (param_grads) {
                    ConstMap<float> xm(x.data().data(), batch, features);
                    MutMap<float>(param_grad(node.params[0]).data(), out, features).noalias() += gm.transpose() * xm;
                    auto& gb = param_grad(node.params[1]);
                    for (std::int64_t b = 0; b < batch; ++b) {
                        for (std::int64_t o = 0; o < out; ++o) {
                            gb[o] += gm(b, o);
                        }
                    }
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& w = params_.at(node.params[0]);
                const ConvGeometry g = conv_geometry(node, id, x.shape().dims(), w.shape().dims());
                const std::int64_t cols = g.batch * g.positions();
                RowMat<float> gym(g.out_channels, cols);
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    for (std::int64_t o = 0; o < g.out_channels; ++o) {
                        const float* src = gy.data() + (b * g.out_channels + o) * g.positions();
                        std::copy(src, src + g.positions(), gym.data() + o * cols + b * g.positions());
                    }
                }
                ConstMap<float> wm(w.data().data(), g.out_channels, g.patch());
                if (param_grads) {
                    std::vector<float> col(static_cast<std::size_t>(g.patch() * cols));
                    im2col(g, x.data().data(), col.data());
                    MutMap<float>(param_grad(node.params[0]).data(), g.out_channels, g.patch()).noalias() +=
                        gym * ConstMap<float>(col.data(), g.patch(), cols).transpose();
                    auto& gb = param_grad(node.params[1]);
                    for (std::int64_t o = 0; o < g.out_channels; ++o) {
                        gb[o] += gym.row(o).sum();
                    }
                }
                RowMat<float> gcol = wm.transpose() * gym;
                col2im(g, gcol.data(), accumulate(xi, x.numel()).data());
                break;
            }
            case OpKind::Relu: {
                auto& gx = accumulate(xi, x.numel());
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    if (x[i] > 0.0f) {
                        gx[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::Tanh: {
                auto& gx = accumulate(xi, x.numel());
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] += gy[i] * (1.0f - y[i] * y[i]);
                }
                break;
            }
            case OpKind::ScaleShift: {
                auto& gx = accumulate(xi, x.numel());
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] += a.scale * gy[i];
                }
                break;
            }
            case OpKind::Clip: {
                // Gradient 1 strictly inside (lo, hi), 0 elsewhere including the boundary.
                auto& gx = accumulate(xi, x.numel());
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    if (x[i] > a.lo && x[i] < a.hi) {
                        gx[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::Floor: {
                auto& gx = accumulate(xi, x.numel());
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    if (x[i] > a.floor) {
                        gx[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::MaxPool2: {
                auto& gx = accumulate(xi, x.numel());
                const std::int64_t c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
                const std::int64_t oh = h / 2, ow = w / 2;
                for (std::int64_t plane = 0; plane < batch * c; ++plane) {
                    const float* src = x.data().data() + plane * h * w;
                    float* dst = gx.data() + plane * h * w;
                    const float* g = gy.data() + plane * oh * ow;
                    for (std::int64_t i = 0; i < oh; ++i) {
                        for (std::int64_t j = 0; j < ow; ++j) {
                            const std::int64_t base = 2 * i * w + 2 * j;
                            std::int64_t best = base;
                            for (std::int64_t off : {base + 1, base + w, base + w + 1}) {
                                if (src[off] > src[best]) {
                                    best = off;
                                }
                            }
                            dst[best] += g[i * ow + j];
                        }
                    }
                }
                break;
            }
            case OpKind::GlobalAvgPool: {
                auto& gx = accumulate(xi, x.numel());
                const std::int64_t hw = x.shape()[2] * x.shape()[3];
                for (std::int64_t plane = 0; plane < batch * x.shape()[1]; ++plane) {
                    const float g = gy[plane] / static_cast<float>(hw);
                    for (std::int64_t i = 0; i < hw; ++i) {
                        gx[plane * hw + i] += g;
                    }
                }
                break;
            }
            case OpKind::Softmax: {
                auto& gx = accumulate(xi, x.numel());
                const auto n = static_cast<std::size_t>(y.shape().dims().back());
                for (std::size_t r = 0; r < y.numel() / n; ++r) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        dot += static_cast<double>(gy[r * n + i]) * y[r * n + i];
                    }
                    for (std::size_t i = 0; i < n; ++i) {
                        gx[r * n + i] += y[r * n + i] * (gy[r * n + i] - static_cast<float>(dot));
                    }
                }
                break;
            }
            case OpKind::Add: {
                for (NodeId in : node.inputs) {
                    auto& gx = accumulate(in, x.numel());
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                        gx[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::L1MeanDistance: {
                const NodeId zi = node.inputs[1];
                const Tensor& z = acts.values[zi];
                const std::size_t per = x.numel() / static_cast<std::size_t>(batch);
                std::vector<float> d(x.numel());
                for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] = gy[i / per] * sign_of(x[i] - z[i]) / static_cast<float>(per);
                }
                auto& gx = accumulate(xi, x.numel());
                for (std::size_t i = 0; i < d.size(); ++i) {
                    gx[i] += d[i];
                }
                auto& gz = accumulate(zi, z.numel());
                for (std::size_t i = 0; i < d.size(); ++i) {
                    gz[i] -= d[i];
                }
                break;
            }
            case OpKind::WeightedSum: {
                for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                    auto& gx = accumulate(node.inputs[k], x.numel());
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                        gx[i] += a.weights[k] * gy[i];
                    }
                }
                break;
            }
            case OpKind::Upsample: {
                auto& gx = accumulate(xi, x.numel());
                const std::int64_t c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
                for (std::int64_t plane = 0; plane < batch * c; ++plane) {
                    float* dst = gx.data() + plane * h * w;
                    const float* g = gy.data() + plane * a.out_h * a.out_w;
                    for (std::int64_t i = 0; i < a.out_h; ++i) {
                        const std::int64_t si = i * h / a.out_h;
                        for (std::int64_t j = 0; j < a.out_w; ++j) {
                            dst[si * w + j * w / a.out_w] += g[i * a.out_w + j];
                        }
                    }
                }
                break;
            }
            case OpKind::Margin: {
                auto& gx = accumulate(xi, x.numel());
                const auto n = static_cast<std::size_t>(x.shape()[1]);
                for (std::int64_t b = 0; b < batch; ++b) {
                    const auto [fir, sec] = top_two(x.data().data() + b * n, n);
                    const float s = static_cast<std::size_t>(a.labels[b]) == fir ? 1.0f : -1.0f;
                    gx[b * n + fir] += s * gy[b];
                    gx[b * n + sec] -= s * gy[b];
                }
                break;
            }
        }
    }

    GradResult result;
    const Tensor& in = acts.values[0];
    std::vector<float> gin = grads[0].empty() ? std::vector<float>(in.numel(), 0.0f) : std::move(grads[0]);
    result.input = acts.batched ? Tensor(in.shape(), std::move(gin))
                                : Tensor(in.shape().drop_front(), std::move(gin));
    if (param_grads) {
        for (const auto& [name, t] : params_) {
            auto it = pgrads.find(name);
            result.params.emplace(name, it == pgrads.end() ? Tensor(t.shape())
                                                           : Tensor(t.shape(), std::move(it->second)));
        }
    }
    return result;
}

Tensor forward(const ComputeGraph& graph, const Tensor& input) { return graph.forward(input); }

GradResult backward(const ComputeGraph& graph, const Activations& acts, const Tensor& output_grad) {
    return graph.backward(acts, output_grad);
}

double grad_check(const ComputeGraph& graph, const Tensor& input, double step) {
    require(step > 0.0, ErrorCode::InvalidArgument, "grad_check step must be positive");
    const Activations acts = graph.run(input);
    const Tensor out = acts.at(graph.output());
    require(out.shape() == Shape{1}, ErrorCode::ShapeMismatch,
            "grad_check requires a scalar output of shape [1], got " + out.shape().to_string());
    const GradResult analytic = graph.backward(acts, Tensor::scalar(1.0f));

    std::map<std::string, std::pair<Dims, std::vector<double>>> params64;
    for (const auto& [name, t] : graph.params()) {
        params64.emplace(name, std::make_pair(t.shape().dims(), std::vector<double>(t.data().begin(), t.data().end())));
    }
    auto [dims, batched] = batched_dims(graph.sample_shape(), input.shape());
    Buffer<double> in64{dims, std::vector<double>(input.data().begin(), input.data().end())};

    auto eval = [&]() {
        auto vals = evaluate<double>(graph.nodes(), in64, [&](const std::string& name) {
            const auto& entry = params64.at(name);
            return ParamView<double>{&entry.first, entry.second.data()};
        });
        return vals[graph.output()].data.at(0);
    };
    auto central = [&](double& slot) {
        const double saved = slot;
        slot = saved + step;
        const double up = eval();
        slot = saved - step;
        const double down = eval();
        slot = saved;
        return (up - down) / (2.0 * step);
    };
    auto rel_error = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
    };

    double worst = 0.0;
    for (auto& [name, entry] : params64) {
        const Tensor& g = analytic.params.at(name);
        for (std::size_t i = 0; i < entry.second.size(); ++i) {
            worst = std::max(worst, rel_error(g[i], central(entry.second[i])));
        }
    }
    for (std::size_t i = 0; i < in64.data.size(); ++i) {
        worst = std::max(worst, rel_error(analytic.input[i], central(in64.data[i])));
    }
    return worst;
}

}  // namespace atnlab
