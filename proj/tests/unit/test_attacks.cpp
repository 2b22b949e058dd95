#include <doctest.h>

#include <cmath>

#include "atnlab/attacks.hpp"
#include "atnlab/budget.hpp"
#include "atnlab/error.hpp"
#include "helpers.hpp"

using namespace atnlab;

namespace {

const Shape kIn{1, 16, 16};

// Trained briefly so gradients are not degenerate.
const ClassifierModel& small_model() {
    static const ClassifierModel m = [] {
        const Dataset d = synth_dataset(11, 120, 4, 16);
        ClassifierModel model = build_classifier("cnn-a", 4, d.image_shape(), 2);
        ClassifierTrainConfig cfg;
        cfg.epochs = 2;
        fit_classifier(model, d, cfg);
        return model;
    }();
    return m;
}

const ClassifierModel& second_model() {
    static const ClassifierModel m = build_classifier("cnn-c", 4, kIn, 5);
    return m;
}

Tensor images(std::uint64_t seed, std::int64_t n = 4) { return testutil::random_image(kIn.prepend(n), seed); }

}  // namespace

TEST_CASE("attack outputs respect the budget exactly") {
    const ClassifierModel& m = small_model();
    RngStream rng(77);
    for (int trial = 0; trial < 12; ++trial) {
        const Tensor x = images(100 + static_cast<std::uint64_t>(trial), 2);
        AttackConfig cfg;
        cfg.epsilon = static_cast<float>(rng.uniform(0.5, 40.0));
        cfg.steps = 1 + static_cast<int>(rng.below(4));
        cfg.alpha = static_cast<float>(rng.uniform(0.1, 20.0));
        cfg.mu = static_cast<float>(rng.uniform(0.0, 2.0));
        CHECK(within_budget(x.data(), fgsm(m, x, cfg).data(), cfg.epsilon));
        CHECK(within_budget(x.data(), pgd(m, x, cfg).data(), cfg.epsilon));
        CHECK(within_budget(x.data(), mi_fgsm(m, x, cfg).data(), cfg.epsilon));
    }
}

TEST_CASE("FGSM equals one PGD step with alpha = eps") {
    const Tensor x = images(1, 6);
    AttackConfig f;
    f.epsilon = 16.0f;
    AttackConfig p = f;
    p.steps = 1;
    p.alpha = 16.0f;
    CHECK(fgsm(small_model(), x, f) == pgd(small_model(), x, p));
}

TEST_CASE("MI-FGSM with mu = 0 follows the PGD trajectory") {
    const Tensor x = images(2, 6);
    AttackConfig cfg;
    cfg.steps = 5;
    cfg.alpha = 3.2f;
    cfg.mu = 0.0f;
    std::vector<Tensor> a, b;
    pgd(small_model(), x, cfg, &a);
    mi_fgsm(small_model(), x, cfg, &b);
    REQUIRE(a.size() == 5);
    CHECK(a == b);
}

TEST_CASE("default MI-FGSM config is valid") {
    AttackConfig cfg;
    cfg.steps = 10;
    cfg.mu = 1.0f;
    cfg.epsilon = 16.0f;
    CHECK_NOTHROW(cfg.validate());
    cfg.epsilon = 0.0f;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("cross-entropy input gradient matches finite differences") {
    const ClassifierModel& m = small_model();
    const Tensor x = images(3, 1).reshaped(kIn);
    const int label = 1;
    const Tensor g = cross_entropy_input_grad(m, x, {label});
    auto ce = [&](const Tensor& img) {
        return -std::log(static_cast<double>(classify(m, img)[label]));
    };
    // spot-check a handful of pixels with a central difference
    for (std::size_t i : {0u, 37u, 100u, 200u, 255u}) {
        Tensor up = x, down = x;
        up[i] += 0.5f;
        down[i] -= 0.5f;
        const double fd = (ce(up) - ce(down)) / 1.0;
        CHECK(std::abs(fd - g[i]) <= 2e-2 * std::max(std::abs(fd), 1e-3) + 1e-5);
    }
}

TEST_CASE("ensemble gradient is the weighted sum of per-target gradients") {
    const GeneratorModel gen = [] {
        GeneratorModel g = build_generator(kIn, 16.0f, 3);
        for (auto& [name, t] : g.graph.params()) {
            const Tensor r = testutil::random_tensor(t.shape(), 8, -0.05, 0.05);
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] += r[i];
        }
        return g;
    }();
    const Tensor x = images(4, 4);
    const std::vector<int> l0 = predict(small_model(), x);
    const std::vector<int> l1 = predict(second_model(), x);
    auto grads = [&](std::vector<const ClassifierModel*> targets, std::vector<float> w,
                     std::vector<std::vector<int>> labels) {
        AtnObjective obj;
        obj.loss.kind = LossKind::Prediction;
        obj.loss.weights = std::move(w);
        obj.targets = std::move(targets);
        obj.apply_threshold = true;
        RngStream rng(1);
        return atn_batch_gradients(gen, obj, x, labels, rng);
    };
    const AtnBatchGrad both = grads({&small_model(), &second_model()}, {1.0f, 0.5f}, {l0, l1});
    const AtnBatchGrad a = grads({&small_model()}, {1.0f}, {l0});
    const AtnBatchGrad b = grads({&second_model()}, {1.0f}, {l1});
    double worst = 0.0;
    double scale = 0.0;
    for (const auto& [name, g] : both.generator) {
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double oracle = static_cast<double>(a.generator.at(name)[i]) + 0.5 * b.generator.at(name)[i];
            worst = std::max(worst, std::abs(oracle - g[i]));
            scale = std::max(scale, std::abs(oracle));
        }
    }
    REQUIRE(scale > 0.0);
    CHECK(worst / scale <= 1e-5);
    CHECK(both.loss == doctest::Approx(a.loss + 0.5 * b.loss).epsilon(1e-6));
}

TEST_CASE("threshold silences targets already below gamma") {
    const GeneratorModel gen = build_generator(kIn, 16.0f, 3);
    const Tensor x = images(5, 4);
    // Reference labels chosen so every image is "fooled" with a large margin:
    // a label that is far from the top makes the loss about -p_fir.
    AtnObjective obj;
    obj.loss.kind = LossKind::Prediction;
    obj.loss.gamma = 0.0f;
    obj.loss.weights = {1.0f, 1.0f};
    obj.targets = {&small_model(), &second_model()};
    obj.apply_threshold = true;
    std::vector<int> wrong0, wrong1;
    const Tensor p0 = classify(small_model(), x);
    const Tensor p1 = classify(second_model(), x);
    for (std::size_t b = 0; b < 4; ++b) {
        wrong0.push_back((static_cast<int>(argmax(p0.row(b).data())) + 1) % 4);
        wrong1.push_back(static_cast<int>(argmax(p1.row(b).data())));
    }
    RngStream rng(1);
    const AtnBatchGrad g = atn_batch_gradients(gen, obj, x, {wrong0, wrong1}, rng);
    // target 0 sits at the floor; only target 1 contributes
    CHECK(g.per_target_loss[0] == doctest::Approx(0.0));
    AtnObjective only1 = obj;
    only1.targets = {&second_model()};
    only1.loss.weights = {1.0f};
    RngStream rng2(1);
    const AtnBatchGrad g1 = atn_batch_gradients(gen, only1, x, {wrong1}, rng2);
    for (const auto& [name, t] : g.generator) {
        CHECK(t == g1.generator.at(name));
    }
}

TEST_CASE("ATN training is deterministic and lowers the loss") {
    const Dataset d = synth_dataset(11, 64, 4, 16);
    AtnTrainConfig cfg;
    cfg.targets = {&small_model()};
    cfg.loss.weights = {1.0f};
    cfg.robust.mode = RobustMode::RandomNoise;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.03f;
    GeneratorModel a = build_generator(kIn, 16.0f, 1);
    GeneratorModel b = build_generator(kIn, 16.0f, 1);
    const TrainingLog la = train_atn(a, cfg, d);
    train_atn(b, cfg, d);
    for (const auto& [name, t] : a.graph.params()) {
        CHECK(b.graph.params().at(name) == t);
    }
    CHECK(la.epochs.size() == 2);
    CHECK(std::isfinite(la.epochs.back().loss));

    AtnTrainConfig bad = cfg;
    bad.loss.weights = {1.0f, 1.0f};
    CHECK_THROWS_AS(train_atn(a, bad, d), Error);
}

TEST_CASE("training filter mode updates the filter") {
    const Dataset d = synth_dataset(12, 32, 4, 16);
    AtnTrainConfig cfg;
    cfg.targets = {&small_model()};
    cfg.loss.weights = {1.0f};
    cfg.robust.mode = RobustMode::TrainingFilter;
    cfg.robust.filter = std::make_shared<FilterModel>(build_filter(kIn, 2));
    cfg.robust.filter_choice_prob = 1.0f;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    const FilterModel before = *cfg.robust.filter;
    GeneratorModel g = build_generator(kIn, 16.0f, 1);
    // nudge the generator so the filter sees a non-trivial gradient
    for (auto& [name, t] : g.graph.params()) {
        const Tensor r = testutil::random_tensor(t.shape(), 9, -0.05, 0.05);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += r[i];
    }
    train_atn(g, cfg, d);
    bool changed = false;
    for (const auto& [name, t] : before.graph.params()) {
        changed |= !(cfg.robust.filter->graph.params().at(name) == t);
    }
    CHECK(changed);
}
