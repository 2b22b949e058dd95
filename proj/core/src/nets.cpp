#include "atnlab/nets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "atnlab/budget.hpp"
#include "atnlab/container.hpp"
#include "atnlab/error.hpp"
#include "atnlab/optim.hpp"
#include "atnlab/rng.hpp"

namespace atnlab {

namespace {

constexpr float kNormScale = 1.0f / 127.5f;
constexpr float kNormShift = -1.0f;

void add_weight(ComputeGraph& g, const std::string& name, Shape shape, double stddev, RngStream& rng) {
    Tensor w(std::move(shape));
    for (auto& v : w.data()) {
        v = static_cast<float>(stddev * rng.normal());
    }
    g.params().add(name, std::move(w));
}

NodeId conv_layer(ComputeGraph& g, NodeId in, const std::string& name, std::int64_t cin, std::int64_t cout,
                  int kernel, int stride, RngStream& rng, bool zero_init = false) {
    const double fan_in = static_cast<double>(cin * kernel * kernel);
    add_weight(g, name + ".w", Shape{cout, cin, kernel, kernel}, zero_init ? 0.0 : std::sqrt(2.0 / fan_in), rng);
    g.params().add(name + ".b", Tensor(Shape{cout}));
    return g.conv2d(in, name + ".w", name + ".b", stride, kernel / 2, name);
}

NodeId dense_layer(ComputeGraph& g, NodeId in, const std::string& name, std::int64_t fin, std::int64_t fout,
                   RngStream& rng) {
    add_weight(g, name + ".w", Shape{fout, fin}, std::sqrt(1.0 / static_cast<double>(fin)), rng);
    g.params().add(name + ".b", Tensor(Shape{fout}));
    return g.dense(in, name + ".w", name + ".b", name);
}

std::int64_t half(std::int64_t extent) { return (extent - 1) / 2 + 1; }

std::string shape_descriptor(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.rank(); ++i) {
        out += (i ? "," : "") + std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape_descriptor(const std::string& text) {
    std::vector<std::int64_t> dims;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        dims.push_back(std::stoll(part));
    }
    return Shape(std::move(dims));
}

std::string float_text(float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void require_image_shape(const Shape& input_shape) {
    require(input_shape.rank() == 3, ErrorCode::InvalidArgument,
            "image models need a [C,H,W] input shape, got " + input_shape.to_string());
}

Container checkpoint_container(const ComputeGraph& graph, std::map<std::string, std::string> arch,
                               const Metadata& meta) {
    Container c;
    c.kind = "checkpoint";
    arch["input_shape"] = shape_descriptor(graph.sample_shape());
    c.arch = std::move(arch);
    c.metadata = meta;
    for (const auto& [name, t] : graph.params()) {
        c.tensors.emplace_back(name, t);
    }
    return c;
}

// Copies stored tensors into a freshly built graph of the same architecture.
void restore_params(ComputeGraph& graph, const Container& c, const std::string& origin) {
    if (c.tensors.size() != graph.params().size()) {
        fail(ErrorCode::ArchMismatch, "arch mismatch in " + origin + ": parameter count differs");
    }
    for (const auto& [name, t] : c.tensors) {
        if (!graph.params().contains(name) || graph.params().at(name).shape() != t.shape()) {
            fail(ErrorCode::ArchMismatch, "arch mismatch in " + origin + ": unexpected parameter '" + name + "' " +
                                              t.shape().to_string());
        }
        graph.params().at(name) = t;
    }
}

Container load_checkpoint_container(const std::filesystem::path& path, std::string_view family) {
    Container c = load_container(path);
    if (c.kind != "checkpoint") {
        fail(ErrorCode::ArchMismatch, "arch mismatch: " + path.string() + " holds a " + c.kind + ", not a checkpoint");
    }
    auto it = c.arch.find("family");
    if (it == c.arch.end() || it->second != family) {
        fail(ErrorCode::ArchMismatch, "arch mismatch: " + path.string() + " is not a " + std::string(family) +
                                          " checkpoint");
    }
    return c;
}

}  // namespace

const std::vector<std::string>& classifier_architectures() {
    static const std::vector<std::string> names{"cnn-a", "cnn-b", "cnn-c"};
    return names;
}

ClassifierModel build_classifier(std::string_view arch_name, int num_classes, const Shape& input_shape,
                                 std::uint64_t seed) {
    const auto& names = classifier_architectures();
    const auto found = std::find(names.begin(), names.end(), arch_name);
    if (found == names.end()) {
        fail(ErrorCode::UnknownArchitecture,
             "unknown architecture '" + std::string(arch_name) + "'; valid names: cnn-a, cnn-b, cnn-c");
    }
    require(num_classes >= 2, ErrorCode::InvalidArgument, "a classifier needs at least two classes");
    require_image_shape(input_shape);
    const std::int64_t c = input_shape[0];

    ClassifierModel m{ComputeGraph(input_shape), num_classes, 0, 0, std::string(arch_name)};
    ComputeGraph& g = m.graph;
    RngStream rng = RngStream(seed).fork(static_cast<std::uint64_t>(found - names.begin()));
    NodeId x = g.scale_shift(g.input(), kNormScale, kNormShift, "normalize");
    std::int64_t width = 0;
    if (arch_name == "cnn-a") {
        x = g.relu(conv_layer(g, x, "conv1", c, 16, 3, 1, rng));
        x = g.relu(conv_layer(g, x, "conv2", 16, 32, 3, 2, rng));
        x = g.relu(conv_layer(g, x, "conv3", 32, 32, 3, 2, rng), "features");
        width = 32;
    } else if (arch_name == "cnn-b") {
        x = g.max_pool2(g.relu(conv_layer(g, x, "conv1", c, 12, 5, 1, rng)));
        x = g.max_pool2(g.relu(conv_layer(g, x, "conv2", 12, 24, 3, 1, rng)));
        x = g.relu(conv_layer(g, x, "conv3", 24, 48, 3, 1, rng), "features");
        width = 48;
    } else {
        x = g.relu(conv_layer(g, x, "conv1", c, 8, 3, 2, rng));
        x = g.relu(conv_layer(g, x, "conv2", 8, 16, 3, 1, rng));
        x = g.relu(conv_layer(g, x, "conv3", 16, 32, 3, 2, rng));
        x = g.relu(conv_layer(g, x, "conv4", 32, 32, 1, 1, rng), "features");
        width = 32;
    }
    m.feature_tap = x;
    x = g.global_avg_pool(x, "pool");
    m.logits = dense_layer(g, x, "fc", width, num_classes, rng);
    g.softmax(m.logits, "probs");
    return m;
}

GeneratorModel build_generator(const Shape& input_shape, float epsilon_train, std::uint64_t seed) {
    require(epsilon_train > 0.0f, ErrorCode::InvalidArgument, "epsilon_train must be positive");
    require_image_shape(input_shape);
    const std::int64_t c = input_shape[0];
    const std::int64_t h0 = input_shape[1], w0 = input_shape[2];
    const std::int64_t h1 = half(h0), w1 = half(w0);
    const std::int64_t h2 = half(h1), w2 = half(w1);

    GeneratorModel m{ComputeGraph(input_shape), epsilon_train};
    ComputeGraph& g = m.graph;
    RngStream rng = RngStream(seed).fork(0x6e6);
    NodeId x = g.scale_shift(g.input(), kNormScale, kNormShift, "normalize");
    x = g.relu(conv_layer(g, x, "enc1", c, 16, 3, 2, rng));
    x = g.relu(conv_layer(g, x, "enc2", 16, 32, 3, 2, rng));
    x = g.relu(conv_layer(g, x, "enc3", 32, 64, 3, 2, rng));
    x = g.relu(conv_layer(g, g.upsample(x, h2, w2), "dec1", 64, 32, 3, 1, rng));
    x = g.relu(conv_layer(g, g.upsample(x, h1, w1), "dec2", 32, 16, 3, 1, rng));
    x = conv_layer(g, g.upsample(x, h0, w0), "dec3", 16, c, 3, 1, rng, /*zero_init=*/true);
    g.tanh(x, "direction");
    return m;
}

FilterModel build_filter(const Shape& input_shape, std::uint64_t seed) {
    require_image_shape(input_shape);
    const std::int64_t c = input_shape[0];
    FilterModel m{ComputeGraph(input_shape)};
    ComputeGraph& g = m.graph;
    RngStream rng = RngStream(seed).fork(0xf17);
    NodeId x = g.scale_shift(g.input(), kNormScale, kNormShift, "normalize");
    x = g.relu(conv_layer(g, x, "filt1", c, 8, 3, 1, rng));
    x = conv_layer(g, x, "filt2", 8, c, 3, 1, rng, /*zero_init=*/true);
    x = g.scale_shift(x, 127.5f, 0.0f, "denormalize");
    g.add(g.input(), x, "residual");
    return m;
}

Tensor classify(const ClassifierModel& model, const Tensor& image) { return model.graph.forward(image); }

Tensor features(const ClassifierModel& model, const Tensor& image) {
    return model.graph.run(image).at(model.feature_tap);
}

std::vector<int> predict(const ClassifierModel& model, const Tensor& images) {
    const Tensor probs = model.graph.run(images).raw(model.graph.output());
    const auto n = static_cast<std::size_t>(model.num_classes);
    std::vector<int> labels(probs.numel() / n);
    for (std::size_t b = 0; b < labels.size(); ++b) {
        labels[b] = static_cast<int>(argmax(probs.data().subspan(b * n, n)));
    }
    return labels;
}

GeneratedBatch generate_with_cache(const GeneratorModel& gen, const Tensor& images, float epsilon) {
    require(epsilon > 0.0f, ErrorCode::InvalidArgument, "epsilon must be positive");
    GeneratedBatch out;
    out.epsilon = epsilon;
    out.acts = gen.graph.run(images);
    const Tensor& direction = out.acts.raw(gen.graph.output());
    std::vector<float> adv(images.numel());
    out.pass.resize(images.numel());
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const float pre = images[i] + epsilon * direction[i];
        out.pass[i] = pre > kPixelMin && pre < kPixelMax;
        adv[i] = pre;
    }
    out.adversarial = Tensor(images.shape(), std::move(adv));
    project_linf(images.data(), out.adversarial.data(), epsilon);
    return out;
}

Tensor generate_adversarial(const GeneratorModel& gen, const Tensor& image, float epsilon) {
    return generate_with_cache(gen, image, epsilon).adversarial;
}

GradResult generator_backward(const GeneratorModel& gen, const GeneratedBatch& batch, const Tensor& grad_adv) {
    require(grad_adv.shape() == batch.adversarial.shape(), ErrorCode::ShapeMismatch,
            "generator gradient shape " + grad_adv.shape().to_string() + " vs " +
                batch.adversarial.shape().to_string());
    Tensor grad_direction = batch.acts.at(gen.graph.output());
    for (std::size_t i = 0; i < grad_direction.numel(); ++i) {
        grad_direction[i] = batch.pass[i] ? batch.epsilon * grad_adv[i] : 0.0f;
    }
    return gen.graph.backward(batch.acts, grad_direction, true);
}

std::vector<EpochStats> fit_classifier(ClassifierModel& model, const Dataset& data, const ClassifierTrainConfig& cfg) {
    require(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorCode::InvalidArgument, "epochs and batch size must be >= 1");
    require(cfg.label_smoothing >= 0.0f && cfg.label_smoothing < 1.0f, ErrorCode::InvalidArgument,
            "label smoothing must be in [0, 1)");
    require(data.num_classes == model.num_classes, ErrorCode::InvalidArgument,
            "dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                std::to_string(model.num_classes));
    Sgd opt(cfg.learning_rate, cfg.momentum);
    RngStream rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto n = static_cast<std::size_t>(model.num_classes);
    std::vector<EpochStats> log;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[rng.below(i + 1)]);
        }
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const Dataset batch = data.subset(std::span<const std::size_t>(order).subspan(begin, end - begin));
            const Activations acts = model.graph.run(batch.images);
            const Tensor& probs = acts.raw(model.graph.output());
            const std::size_t rows = end - begin;
            Tensor grad_logits(acts.raw(model.logits).shape());
            const float off = cfg.label_smoothing / static_cast<float>(n);
            const float on = 1.0f - cfg.label_smoothing + off;
            for (std::size_t b = 0; b < rows; ++b) {
                const int y = batch.labels[b];
                const float* p = probs.data().data() + b * n;
                correct += static_cast<int>(argmax(std::span<const float>(p, n))) == y;
                for (std::size_t k = 0; k < n; ++k) {
                    const float target = static_cast<int>(k) == y ? on : off;
                    loss_sum -= target * std::log(std::max(static_cast<double>(p[k]), 1e-12));
                    grad_logits[b * n + k] = (p[k] - target) / static_cast<float>(rows);
                }
            }
            const GradSeed seed{model.logits, grad_logits};
            const GradResult grads = model.graph.backward(acts, std::span<const GradSeed>(&seed, 1), true);
            opt.step(model.graph.params(), grads.params);
        }
        const double loss = loss_sum / static_cast<double>(data.size());
        if (!std::isfinite(loss)) {
            fail(ErrorCode::NonFiniteLoss, "classifier training diverged at epoch " + std::to_string(epoch));
        }
        log.push_back({epoch, loss, static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    return log;
}

double accuracy(const ClassifierModel& model, const Dataset& data) {
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t end = std::min(data.size(), begin + kChunk);
        const auto labels = predict(model, data.batch(begin, end));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            correct += labels[i] == data.labels[begin + i];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path, const Metadata& meta) {
    save_container(path, checkpoint_container(model.graph,
                                              {{"family", "classifier"},
                                               {"name", model.arch_name},
                                               {"num_classes", std::to_string(model.num_classes)}},
                                              meta));
}

void save_checkpoint(const GeneratorModel& model, const std::filesystem::path& path, const Metadata& meta) {
    save_container(path, checkpoint_container(model.graph,
                                              {{"family", "generator"},
                                               {"name", "atn-encdec"},
                                               {"epsilon_train", float_text(model.epsilon_train)}},
                                              meta));
}

void save_checkpoint(const FilterModel& model, const std::filesystem::path& path, const Metadata& meta) {
    save_container(path, checkpoint_container(model.graph, {{"family", "filter"}, {"name", "residual-filter"}}, meta));
}

ClassifierModel load_classifier(const std::filesystem::path& path, std::string_view expected_arch, Metadata* meta) {
    const Container c = load_checkpoint_container(path, "classifier");
    const std::string& name = c.arch.at("name");
    if (!expected_arch.empty() && name != expected_arch) {
        fail(ErrorCode::ArchMismatch, "arch mismatch: " + path.string() + " holds " + name + ", expected " +
                                          std::string(expected_arch));
    }
    ClassifierModel m =
        build_classifier(name, std::stoi(c.arch.at("num_classes")), parse_shape_descriptor(c.arch.at("input_shape")));
    restore_params(m.graph, c, path.string());
    if (meta) {
        *meta = c.metadata;
    }
    return m;
}

GeneratorModel load_generator(const std::filesystem::path& path, Metadata* meta) {
    const Container c = load_checkpoint_container(path, "generator");
    GeneratorModel m =
        build_generator(parse_shape_descriptor(c.arch.at("input_shape")), std::stof(c.arch.at("epsilon_train")));
    restore_params(m.graph, c, path.string());
    if (meta) {
        *meta = c.metadata;
    }
    return m;
}

FilterModel load_filter(const std::filesystem::path& path, Metadata* meta) {
    const Container c = load_checkpoint_container(path, "filter");
    FilterModel m = build_filter(parse_shape_descriptor(c.arch.at("input_shape")));
    restore_params(m.graph, c, path.string());
    if (meta) {
        *meta = c.metadata;
    }
    return m;
}

}  // namespace atnlab
