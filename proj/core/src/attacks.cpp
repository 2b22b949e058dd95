#include "atnlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "atnlab/budget.hpp"
#include "atnlab/error.hpp"
#include "atnlab/optim.hpp"

namespace atnlab {

namespace {

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

// x_next = project(x + step * direction) around `clean`.
Tensor sign_step(const Tensor& clean, const Tensor& current, std::span<const float> direction, float step, float eps) {
    Tensor next = current;
    for (std::size_t i = 0; i < next.numel(); ++i) {
        next[i] = current[i] + step * direction[i];
    }
    project_linf(clean.data(), next.data(), eps);
    return next;
}

std::vector<float> signs(const Tensor& grad) {
    std::vector<float> s(grad.numel());
    std::transform(grad.data().begin(), grad.data().end(), s.begin(), sign_of);
    return s;
}

std::size_t rows_of(const ClassifierModel& model, const Tensor& images) {
    return images.shape() == model.graph.sample_shape() ? 1 : static_cast<std::size_t>(images.shape()[0]);
}

}  // namespace

void AttackConfig::validate() const {
    require(epsilon > 0.0f && std::isfinite(epsilon), ErrorCode::InvalidArgument, "epsilon must be > 0");
    require(steps >= 1, ErrorCode::InvalidArgument, "steps must be >= 1");
    require(alpha > 0.0f && std::isfinite(alpha), ErrorCode::InvalidArgument, "alpha must be > 0");
    require(mu >= 0.0f && std::isfinite(mu), ErrorCode::InvalidArgument, "mu must be >= 0");
}

Tensor cross_entropy_input_grad(const ClassifierModel& model, const Tensor& images, const std::vector<int>& labels) {
    const Activations acts = model.graph.run(images);
    Tensor grad = acts.at(model.logits);
    const Tensor& probs = acts.raw(model.graph.output());
    const auto n = static_cast<std::size_t>(model.num_classes);
    require(labels.size() * n == probs.numel(), ErrorCode::ShapeMismatch,
            "expected one label per image, got " + std::to_string(labels.size()));
    for (std::size_t b = 0; b < labels.size(); ++b) {
        for (std::size_t k = 0; k < n; ++k) {
            grad[b * n + k] = probs[b * n + k] - (static_cast<int>(k) == labels[b] ? 1.0f : 0.0f);
        }
    }
    const GradSeed seed{model.logits, std::move(grad)};
    return model.graph.backward(acts, std::span<const GradSeed>(&seed, 1), false).input;
}

Tensor fgsm(const ClassifierModel& model, const Tensor& images, const AttackConfig& cfg) {
    require(cfg.epsilon > 0.0f, ErrorCode::InvalidArgument, "epsilon must be > 0");
    const std::vector<int> labels = predict(model, images);
    const Tensor grad = cross_entropy_input_grad(model, images, labels);
    return sign_step(images, images, signs(grad), cfg.epsilon, cfg.epsilon);
}

Tensor pgd(const ClassifierModel& model, const Tensor& images, const AttackConfig& cfg,
           std::vector<Tensor>* trajectory) {
    cfg.validate();
    const std::vector<int> labels = predict(model, images);
    Tensor x = images;
    for (int t = 0; t < cfg.steps; ++t) {
        const Tensor grad = cross_entropy_input_grad(model, x, labels);
        x = sign_step(images, x, signs(grad), cfg.alpha, cfg.epsilon);
        if (trajectory) {
            trajectory->push_back(x);
        }
    }
    return x;
}

Tensor mi_fgsm(const ClassifierModel& model, const Tensor& images, const AttackConfig& cfg,
               std::vector<Tensor>* trajectory) {
    cfg.validate();
    const std::vector<int> labels = predict(model, images);
    const std::size_t rows = rows_of(model, images);
    const std::size_t per = images.numel() / rows;
    std::vector<double> momentum(images.numel(), 0.0);
    std::vector<float> direction(images.numel());
    Tensor x = images;
    for (int t = 0; t < cfg.steps; ++t) {
        const Tensor grad = cross_entropy_input_grad(model, x, labels);
        for (std::size_t b = 0; b < rows; ++b) {
            double l1 = 0.0;
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                l1 += std::abs(static_cast<double>(grad[i]));
            }
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                // A zero gradient contributes nothing to the accumulator.
                const double normalized = l1 > 0.0 ? grad[i] / l1 : 0.0;
                momentum[i] = cfg.mu * momentum[i] + normalized;
                direction[i] = momentum[i] > 0.0 ? 1.0f : (momentum[i] < 0.0 ? -1.0f : 0.0f);
            }
        }
        x = sign_step(images, x, direction, cfg.alpha, cfg.epsilon);
        if (trajectory) {
            trajectory->push_back(x);
        }
    }
    return x;
}

AtnBatchGrad atn_batch_gradients(const GeneratorModel& gen, const AtnObjective& objective, const Tensor& images,
                                 const std::vector<std::vector<int>>& reference_labels, RngStream& rng,
                                 bool filter_grads) {
    const auto& targets = objective.targets;
    require(!targets.empty(), ErrorCode::InvalidArgument, "ATN objective needs at least one target");
    require(objective.loss.weights.size() == targets.size(), ErrorCode::InvalidArgument,
            "ATN objective needs one weight per target");
    require(images.shape().rank() == 4, ErrorCode::ShapeMismatch,
            "ATN batches must be [B,C,H,W], got " + images.shape().to_string());
    const auto batch = static_cast<std::size_t>(images.shape()[0]);
    const LossKind kind = objective.loss.kind;
    if (kind != LossKind::Feature) {
        require(reference_labels.size() == targets.size(), ErrorCode::InvalidArgument,
                "one reference label list per target required");
    }

    const GeneratedBatch generated = generate_with_cache(gen, images, objective.epsilon);
    const EnhanceBranch branch = choose_branch(objective.robust, rng, Phase::Train);
    const EnhancedBatch adv = enhance_on_branch(generated.adversarial, objective.robust, branch, rng);
    EnhancedBatch clean;
    if (kind == LossKind::Feature) {
        clean = enhance_on_branch(images, objective.robust, branch, rng);
    }
    const bool want_filter = filter_grads && branch == EnhanceBranch::Filter;

    AtnBatchGrad out;
    out.branch = branch;
    out.per_target_loss.assign(targets.size(), 0.0);
    Tensor grad_adv(adv.output.shape());
    Tensor grad_clean;
    if (want_filter && kind == LossKind::Feature) {
        grad_clean = Tensor(clean.output.shape());
    }
    const float inv_batch = 1.0f / static_cast<float>(batch);

    for (std::size_t n = 0; n < targets.size(); ++n) {
        const ClassifierModel& model = *targets[n];
        const float w = objective.loss.weights[n];
        const Activations acts = model.graph.run(adv.output);
        double loss_sum = 0.0;
        GradSeed seed;
        if (kind == LossKind::Feature) {
            const Activations clean_acts = model.graph.run(clean.output);
            const Tensor& fc = clean_acts.raw(model.feature_tap);
            const Tensor& fa = acts.raw(model.feature_tap);
            Tensor g(fa.shape());
            const std::size_t per = fa.numel() / batch;
            for (std::size_t b = 0; b < batch; ++b) {
                const LossGrad l = loss_feature(fc.slice_rows(b, b + 1), fa.slice_rows(b, b + 1));
                loss_sum += l.value;
                for (std::size_t i = 0; i < per; ++i) {
                    g[b * per + i] = w * inv_batch * l.grad[i];
                }
            }
            if (want_filter) {
                // The loss depends on |adv - clean|, so the clean side gets the opposite sign.
                Tensor gc = g;
                gc *= -1.0f;
                const GradSeed clean_seed{model.feature_tap, std::move(gc)};
                grad_clean += model.graph.backward(clean_acts, std::span<const GradSeed>(&clean_seed, 1), false).input;
            }
            seed = GradSeed{model.feature_tap, std::move(g)};
        } else {
            const Tensor& probs = acts.raw(model.graph.output());
            const auto classes = static_cast<std::size_t>(model.num_classes);
            Tensor g(probs.shape());
            for (std::size_t b = 0; b < batch; ++b) {
                const int ref = reference_labels[n].at(b);
                const std::span<const float> row = probs.data().subspan(b * classes, classes);
                if (kind == LossKind::TrueLabel) {
                    require(ref >= 0 && static_cast<std::size_t>(ref) < classes, ErrorCode::InvalidArgument,
                            "true label out of range");
                    loss_sum += row[static_cast<std::size_t>(ref)];
                    g[b * classes + static_cast<std::size_t>(ref)] = w * inv_batch;
                    continue;
                }
                const LossGrad l = loss_prediction(ref, row);
                float value = l.value;
                float slope = 1.0f;
                if (objective.apply_threshold) {
                    const ThresholdGrad t = loss_threshold(l.value, objective.loss.gamma);
                    value = t.value;
                    slope = t.slope;
                }
                loss_sum += value;
                if (slope != 0.0f) {
                    for (std::size_t k = 0; k < classes; ++k) {
                        g[b * classes + k] = w * inv_batch * slope * l.grad[k];
                    }
                }
            }
            seed = GradSeed{model.graph.output(), std::move(g)};
        }
        out.per_target_loss[n] = loss_sum / static_cast<double>(batch);
        out.loss += static_cast<double>(w) * out.per_target_loss[n];
        grad_adv += model.graph.backward(acts, std::span<const GradSeed>(&seed, 1), false).input;
    }

    EnhanceGrad through = robust_enhance_backward(adv, objective.robust, grad_adv, want_filter);
    out.generator = generator_backward(gen, generated, through.input).params;
    if (want_filter) {
        out.filter = std::move(through.filter_params);
        if (kind == LossKind::Feature) {
            EnhanceGrad clean_through = robust_enhance_backward(clean, objective.robust, grad_clean, true);
            for (auto& [name, g] : clean_through.filter_params) {
                out.filter.at(name) += g;
            }
        }
    }
    return out;
}

void AtnTrainConfig::validate() const {
    require(!targets.empty(), ErrorCode::InvalidArgument, "ATN training needs at least one target");
    for (const auto* t : targets) {
        require(t != nullptr, ErrorCode::InvalidArgument, "null ATN target");
    }
    require(loss.weights.size() == targets.size(), ErrorCode::InvalidArgument,
            "ATN training needs one weight per target (" + std::to_string(targets.size()) + " targets, " +
                std::to_string(loss.weights.size()) + " weights)");
    loss.validate();
    robust.validate();
    require(epsilon > 0.0f, ErrorCode::InvalidArgument, "epsilon must be > 0");
    require(learning_rate > 0.0f && filter_learning_rate > 0.0f, ErrorCode::InvalidArgument,
            "learning rates must be > 0");
    require(epochs >= 1 && batch_size >= 1, ErrorCode::InvalidArgument, "epochs and batch size must be >= 1");
}

TrainingLog train_atn(GeneratorModel& gen, const AtnTrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    const std::size_t count = data.size();
    std::vector<std::vector<int>> reference(cfg.targets.size());
    std::vector<int> monitor_reference;
    for (std::size_t n = 0; n < cfg.targets.size(); ++n) {
        if (cfg.loss.kind == LossKind::TrueLabel) {
            reference[n] = data.labels;
        } else {
            reference[n] = predict(*cfg.targets[n], data.images);
        }
    }
    const std::size_t monitor = std::min(count, cfg.monitor_images);
    const Tensor monitor_images = data.batch(0, monitor);
    monitor_reference = predict(*cfg.targets[0], monitor_images);

    AtnObjective objective{cfg.loss, cfg.robust, cfg.targets, cfg.epsilon,
                           cfg.targets.size() > 1 && cfg.loss.kind == LossKind::Prediction};
    const bool train_filter = cfg.robust.mode == RobustMode::TrainingFilter;
    Sgd gen_opt(cfg.learning_rate);
    Sgd filter_opt(cfg.filter_learning_rate);
    RngStream rng(cfg.seed);
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainingLog log;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = count - 1; i > 0; --i) {
            std::swap(order[i], order[rng.below(i + 1)]);
        }
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < count; begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(count, begin + static_cast<std::size_t>(cfg.batch_size));
            const auto idx = std::span<const std::size_t>(order).subspan(begin, end - begin);
            const Tensor images = data.subset(idx).images;
            std::vector<std::vector<int>> labels(reference.size());
            for (std::size_t n = 0; n < reference.size(); ++n) {
                for (std::size_t i : idx) {
                    labels[n].push_back(reference[n][i]);
                }
            }
            const AtnBatchGrad step = atn_batch_gradients(gen, objective, images, labels, rng, train_filter);
            if (!std::isfinite(step.loss)) {
                fail(ErrorCode::NonFiniteLoss, "ATN training diverged: non-finite loss at epoch " +
                                                   std::to_string(epoch));
            }
            loss_sum += step.loss * static_cast<double>(end - begin);
            gen_opt.step(gen.graph.params(), step.generator);
            if (train_filter && step.branch == EnhanceBranch::Filter) {
                // The filter plays the defender: gradient ascent on the attack loss.
                filter_opt.step(cfg.robust.filter->graph.params(), step.filter, /*ascend=*/true);
            }
        }
        const std::vector<int> adv_labels =
            predict(*cfg.targets[0], generate_adversarial(gen, monitor_images, cfg.epsilon));
        std::size_t fooled = 0;
        for (std::size_t i = 0; i < monitor; ++i) {
            fooled += adv_labels[i] != monitor_reference[i];
        }
        log.epochs.push_back({epoch, loss_sum / static_cast<double>(count),
                              static_cast<double>(fooled) / static_cast<double>(monitor)});
    }
    return log;
}

TrainingLog atn_modified_baseline(GeneratorModel& gen, const ClassifierModel& target, const Dataset& data,
                                  AtnTrainConfig cfg) {
    cfg.loss.kind = LossKind::TrueLabel;
    cfg.loss.weights = {1.0f};
    cfg.robust = RobustConfig{};
    cfg.targets = {&target};
    return train_atn(gen, cfg, data);
}

}  // namespace atnlab
