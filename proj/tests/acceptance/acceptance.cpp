// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   atnlab_acceptance [--only 1,2,...] [--report-dir DIR]
//
// Criteria 5-9 share one "lab": three classifiers trained on the synthetic
// set and a handful of generators trained against cnn-a.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "atnlab/attacks.hpp"
#include "atnlab/budget.hpp"
#include "atnlab/container.hpp"
#include "atnlab/error.hpp"
#include "atnlab/eval.hpp"
#include "atnlab/graph.hpp"
#include "atnlab/losses.hpp"
#include "atnlab/robust.hpp"

using namespace atnlab;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

Tensor random_tensor(const Shape& shape, RngStream& rng, double lo, double hi) {
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Random pixels with a share of exact 0 and 255 so the range clamp is exercised.
Tensor random_pixels(const Shape& shape, RngStream& rng) {
    Tensor t(shape);
    for (auto& v : t.data()) {
        const double u = rng.uniform01();
        v = u < 0.1 ? 0.0f : u < 0.2 ? 255.0f : static_cast<float>(rng.uniform(0.0, 255.0));
    }
    return t;
}

void jitter(ComputeGraph& g, RngStream& rng, double scale) {
    for (auto& [name, t] : g.params()) {
        for (auto& v : t.data()) v += static_cast<float>(rng.uniform(-scale, scale));
    }
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

Outcome gradients() {
    const auto t0 = Clock::now();
    RngStream rng(101);
    double worst = 0.0;
    std::string worst_name;
    auto check = [&](const std::string& name, const ComputeGraph& g, const Tensor& x, double step) {
        const double e = grad_check(g, x, step);
        if (e > worst) {
            worst = e;
            worst_name = name;
        }
    };
    auto head = [&](ComputeGraph& g, NodeId node, std::int64_t n) {
        g.params().add("head.w", random_tensor(Shape{1, n}, rng, -0.5, 0.5));
        g.params().add("head.b", random_tensor(Shape{1}, rng, -0.5, 0.5));
        g.dense(node, "head.w", "head.b", "head");
    };
    // Inputs kept clear of relu / clip kinks.
    auto smooth_input = [&](const Shape& s, std::initializer_list<float> kinks) {
        Tensor t = random_tensor(s, rng, -1.0, 1.0);
        for (auto& v : t.data())
            for (float k : kinks)
                if (std::abs(v - k) < 0.05f) v = k + (v >= k ? 0.05f : -0.05f);
        return t;
    };
    {
        ComputeGraph g(Shape{6});
        head(g, g.input(), 6);
        check("dense", g, smooth_input(Shape{6}, {}), 1e-3);
    }
    for (int stride : {1, 2}) {
        ComputeGraph g(Shape{2, 5, 5});
        g.params().add("c.w", random_tensor(Shape{3, 2, 3, 3}, rng, -0.5, 0.5));
        g.params().add("c.b", random_tensor(Shape{3}, rng, -0.5, 0.5));
        const NodeId c = g.conv2d(g.input(), "c.w", "c.b", stride, 1);
        const std::int64_t side = stride == 1 ? 5 : 3;
        head(g, c, 3 * side * side);
        check("conv2d/" + std::to_string(stride), g, smooth_input(Shape{2, 5, 5}, {}), 1e-3);
    }
    {
        ComputeGraph g(Shape{8});
        head(g, g.relu(g.input()), 8);
        check("relu", g, smooth_input(Shape{8}, {0.0f}), 1e-3);
    }
    {
        ComputeGraph g(Shape{1, 4, 4});
        head(g, g.max_pool2(g.input()), 4);
        Tensor x(Shape{1, 4, 4});
        const int perm[] = {3, 14, 7, 0, 11, 5, 9, 12, 2, 15, 6, 10, 13, 1, 8, 4};
        for (std::size_t i = 0; i < 16; ++i) x[i] = 0.1f * static_cast<float>(perm[i]);
        check("max_pool2", g, x, 1e-3);
    }
    {
        ComputeGraph g(Shape{3, 4, 4});
        head(g, g.global_avg_pool(g.input()), 3);
        check("global_avg_pool", g, smooth_input(Shape{3, 4, 4}, {}), 1e-3);
    }
    {
        ComputeGraph g(Shape{5});
        head(g, g.softmax(g.input()), 5);
        check("softmax", g, smooth_input(Shape{5}, {}), 1e-3);
    }
    {
        ComputeGraph g(Shape{6});
        head(g, g.add(g.input(), g.tanh(g.input())), 6);
        check("add+tanh", g, smooth_input(Shape{6}, {}), 1e-3);
    }
    {
        ComputeGraph g(Shape{8});
        head(g, g.clip(g.input(), -0.5f, 0.5f), 8);
        check("clip", g, smooth_input(Shape{8}, {-0.5f, 0.5f}), 1e-3);
    }
    {
        ComputeGraph g(Shape{6});
        g.l1_mean_distance(g.input(), g.scale_shift(g.input(), 0.5f, 0.3f));
        check("scale_shift+l1", g, smooth_input(Shape{6}, {0.6f}), 1e-3);
    }
    {
        ComputeGraph g(Shape{4});
        head(g, g.weighted_sum({g.tanh(g.input()), g.scale_shift(g.input(), 2.0f, -1.0f)}, {0.5f, 1.5f}), 4);
        check("weighted_sum", g, smooth_input(Shape{4}, {}), 1e-3);
    }
    {
        ComputeGraph g(Shape{2, 3, 3});
        head(g, g.upsample(g.input(), 5, 6), 60);
        check("upsample", g, smooth_input(Shape{2, 3, 3}, {}), 1e-3);
    }
    // Full classifier + loss graphs on pixel-scale input. A parameter step of
    // 1e-3 would shift pre-activations by ~0.25 and cross relu kinks.
    const Shape in{1, 16, 16};
    const Tensor x = random_tensor(in, rng, 0.0, 255.0);
    for (const auto& arch : classifier_architectures()) {
        {
            ClassifierModel m = build_classifier(arch, 4, in, 3);
            const int label = static_cast<int>(argmax(classify(m, x).data()));
            append_prediction_loss(m.graph, m.graph.output(), {label});
            check(arch + "+prediction", m.graph, x, 1e-6);
        }
        {
            ClassifierModel m = build_classifier(arch, 4, in, 3);
            const NodeId p = m.graph.output();
            const NodeId t0 = append_threshold(m.graph, append_prediction_loss(m.graph, p, {0}), -0.9f);
            const NodeId t1 = append_threshold(m.graph, append_prediction_loss(m.graph, p, {1}), -0.9f);
            append_ensemble(m.graph, {t0, t1}, {1.0f, 0.5f});
            check(arch + "+ensemble", m.graph, x, 1e-6);
        }
        {
            ClassifierModel m = build_classifier(arch, 4, in, 3);
            append_feature_loss(m.graph, m.feature_tap, m.graph.scale_shift(m.feature_tap, 0.5f, 0.25f));
            check(arch + "+feature", m.graph, x, 1e-6);
        }
    }
    const double secs = since(t0);
    return {worst <= 1e-3 && secs < 60.0,
            "worst relative error " + fmt(worst, 6) + " (" + worst_name + "), " + fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------------------
// 2. budget feasibility

Outcome budgets() {
    const Shape in{1, 16, 16};
    std::vector<ClassifierModel> models;
    for (const auto& arch : classifier_architectures()) models.push_back(build_classifier(arch, 5, in, 9));
    RngStream rng(202);
    std::vector<GeneratorModel> gens;
    for (float eps : {4.0f, 16.0f, 64.0f}) {
        GeneratorModel g = build_generator(in, eps, 5);
        jitter(g.graph, rng, 1.0);
        gens.push_back(std::move(g));
    }
    constexpr int kTrials = 10000;
    int violations = 0;
    int per_method[4] = {};
    for (int trial = 0; trial < kTrials; ++trial) {
        const int method = trial % 4;
        const Tensor x = random_pixels(in.prepend(1 + static_cast<std::int64_t>(rng.below(2))), rng);
        const ClassifierModel& m = models[rng.below(models.size())];
        AttackConfig cfg;
        cfg.epsilon = static_cast<float>(rng.uniform(0.01, 64.0));
        cfg.steps = 1 + static_cast<int>(rng.below(4));
        cfg.alpha = static_cast<float>(rng.uniform(0.01, 2.0 * cfg.epsilon));
        cfg.mu = static_cast<float>(rng.uniform(0.0, 2.0));
        Tensor adv;
        switch (method) {
            case 0: adv = fgsm(m, x, cfg); break;
            case 1: adv = pgd(m, x, cfg); break;
            case 2: adv = mi_fgsm(m, x, cfg); break;
            default: {
                GeneratorBank bank;
                for (const auto& g : gens) bank.by_epsilon[g.epsilon_train] = &g;
                adv = bank.generate(x, cfg.epsilon);
            }
        }
        ++per_method[method];
        bool ok = adv.shape() == x.shape() && within_budget(x.data(), adv.data(), cfg.epsilon);
        for (float v : adv.data()) ok = ok && v >= 0.0f && v <= 255.0f;
        violations += ok ? 0 : 1;
    }
    return {violations == 0, std::to_string(kTrials) + " trials (" + std::to_string(per_method[0]) + " each method), " +
                                 std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------------------
// 3. baseline degeneracies

Outcome degeneracies() {
    const Shape in{1, 16, 16};
    ClassifierModel m = build_classifier("cnn-a", 5, in, 4);
    RngStream rng(303);
    int fgsm_mismatch = 0, traj_mismatch = 0;
    constexpr int kImages = 100;
    for (int i = 0; i < kImages; ++i) {
        const Tensor x = random_pixels(in, rng);
        AttackConfig f;
        f.epsilon = static_cast<float>(rng.uniform(0.5, 32.0));
        AttackConfig p = f;
        p.steps = 1;
        p.alpha = f.epsilon;
        fgsm_mismatch += fgsm(m, x, f) == pgd(m, x, p) ? 0 : 1;

        AttackConfig t = f;
        t.steps = 10;
        t.alpha = static_cast<float>(rng.uniform(0.5, 8.0));
        t.mu = 0.0f;
        std::vector<Tensor> a, b;
        pgd(m, x, t, &a);
        mi_fgsm(m, x, t, &b);
        traj_mismatch += (a.size() == 10 && a == b) ? 0 : 1;
    }
    return {fgsm_mismatch == 0 && traj_mismatch == 0,
            "FGSM vs PGD(1, eps) mismatches " + std::to_string(fgsm_mismatch) + "/" + std::to_string(kImages) +
                ", MI-FGSM(mu=0) vs PGD trajectory mismatches " + std::to_string(traj_mismatch) + "/" +
                std::to_string(kImages)};
}

// ---------------------------------------------------------------------------
// 4. loss algebra

Outcome loss_algebra() {
    RngStream rng(404);
    int range_bad = 0, sign_bad = 0, floor_bad = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 2 + rng.below(15);
        std::vector<float> p(n);
        double sum = 0.0;
        const double sharp = 1.0 + 8.0 * rng.uniform01();
        for (auto& v : p) {
            v = static_cast<float>(std::pow(rng.uniform01(), sharp));
            sum += v;
        }
        for (auto& v : p) v = static_cast<float>(v / sum);
        const int clean = static_cast<int>(rng.below(n));
        const float l = loss_prediction(clean, p).value;
        range_bad += (l >= -1.0f && l <= 1.0f) ? 0 : 1;
        // negative loss means the clean label is no longer on top
        if (l < 0.0f && static_cast<int>(top2(p).fir) == clean) ++sign_bad;

        const auto gamma = static_cast<float>(rng.uniform(-1.0, 0.0));
        const ThresholdGrad t = loss_threshold(l, gamma);
        if (t.value < gamma || (l <= gamma && t.slope != 0.0f) || (l > gamma && t.slope != 1.0f)) ++floor_bad;
    }

    // Ensemble gradient against a per-target oracle.
    const Shape in{1, 16, 16};
    const ClassifierModel a = build_classifier("cnn-a", 4, in, 11);
    const ClassifierModel b = build_classifier("cnn-c", 4, in, 12);
    GeneratorModel gen = build_generator(in, 16.0f, 13);
    jitter(gen.graph, rng, 0.05);
    double worst = 0.0;
    for (int batch = 0; batch < 5; ++batch) {
        const Tensor x = random_pixels(in.prepend(4), rng);
        const std::vector<int> la = predict(a, x), lb = predict(b, x);
        auto grads = [&](std::vector<const ClassifierModel*> targets, std::vector<float> w,
                         std::vector<std::vector<int>> labels) {
            AtnObjective obj;
            obj.loss.weights = std::move(w);
            obj.targets = std::move(targets);
            obj.apply_threshold = true;
            RngStream r(1);
            return atn_batch_gradients(gen, obj, x, labels, r);
        };
        const AtnBatchGrad fused = grads({&a, &b}, {1.0f, 0.5f}, {la, lb});
        const AtnBatchGrad ga = grads({&a}, {1.0f}, {la});
        const AtnBatchGrad gb = grads({&b}, {1.0f}, {lb});
        double scale = 0.0, diff = 0.0;
        for (const auto& [name, g] : fused.generator) {
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const double oracle = double(ga.generator.at(name)[i]) + 0.5 * double(gb.generator.at(name)[i]);
                diff = std::max(diff, std::abs(oracle - g[i]));
                scale = std::max(scale, std::abs(oracle));
            }
        }
        worst = std::max(worst, scale > 0.0 ? diff / scale : diff);
    }
    const bool pass = range_bad == 0 && sign_bad == 0 && floor_bad == 0 && worst <= 1e-5;
    return {pass, "range violations " + std::to_string(range_bad) + ", sign violations " + std::to_string(sign_bad) +
                      ", threshold violations " + std::to_string(floor_bad) + ", ensemble gradient rel. error " +
                      fmt(worst, 8)};
}

// ---------------------------------------------------------------------------
// 5-9. the lab

struct LabConfig {
    std::size_t count = 2500;
    int classes = 10;
    int side = 28;
    int classifier_epochs = 15;
    float classifier_lr = 0.05f;
    int atn_epochs = 20;
    float atn_lr = 0.03f;
    std::uint64_t atn_seed = 3;  // generator init
    std::uint64_t atn_shuffle_seed = 1;
};

struct Lab {
    LabConfig cfg;
    Dataset train, eval;
    std::vector<ClassifierModel> models;
    std::vector<NamedModel> named;
    std::vector<double> train_accuracy;
    std::map<float, GeneratorModel> patn;  // noise robust-enhance, by training budget
    std::unique_ptr<GeneratorModel> patn_plain;
    double core_seconds = 0.0;  // classifiers + eps-16 generator + baseline attacks
    FoolingReport baseline, noise_report, resize_report, sweep;
    std::vector<std::string> log;
};

GeneratorModel train_generator(const Lab& lab, float eps, RobustMode mode) {
    GeneratorModel g = build_generator(lab.train.image_shape(), eps, lab.cfg.atn_seed);
    AtnTrainConfig c;
    c.targets = {&lab.models[0]};
    c.loss.kind = LossKind::Prediction;
    c.loss.weights = {1.0f};
    c.robust.mode = mode;
    c.robust.beta = 6.0f;
    c.epsilon = eps;
    c.epochs = lab.cfg.atn_epochs;
    c.learning_rate = lab.cfg.atn_lr;
    c.seed = lab.cfg.atn_shuffle_seed;
    train_atn(g, c, lab.train);
    return g;
}

std::vector<AttackSpec> baseline_attacks(const Lab& lab, const GeneratorBank& bank, float eps, float alpha) {
    AttackConfig ac;
    ac.epsilon = eps;
    ac.steps = 10;
    ac.alpha = alpha;
    ac.mu = 1.0f;
    std::vector<AttackSpec> a;
    a.push_back(atn_attack("p-atn", bank, eps, {"cnn-a"}));
    a.push_back(gradient_attack(AttackMethod::Fgsm, lab.named[0], ac));
    a.push_back(gradient_attack(AttackMethod::Pgd, lab.named[0], ac));
    a.push_back(gradient_attack(AttackMethod::MiFgsm, lab.named[0], ac));
    return a;
}

Lab& lab() {
    static Lab L = [] {
        Lab l;
        const auto t0 = Clock::now();
        const Dataset all = synth_dataset(1, l.cfg.count, l.cfg.classes, l.cfg.side);
        std::tie(l.train, l.eval) = split(all, 0.8, 2);
        l.models.reserve(3);
        for (const auto& arch : classifier_architectures()) {
            ClassifierModel m = build_classifier(arch, l.cfg.classes, l.train.image_shape(), 1);
            ClassifierTrainConfig c;
            c.epochs = l.cfg.classifier_epochs;
            c.learning_rate = l.cfg.classifier_lr;
            fit_classifier(m, l.train, c);
            l.train_accuracy.push_back(accuracy(m, l.train));
            l.log.push_back(arch + ": train accuracy " + fmt(l.train_accuracy.back()) + ", eval accuracy " +
                            fmt(accuracy(m, l.eval)));
            l.models.push_back(std::move(m));
        }
        for (const auto& m : l.models) l.named.push_back({m.arch_name, &m});
        l.log.push_back("classifiers trained in " + fmt(since(t0), 1) + " s");

        const auto t1 = Clock::now();
        l.patn.emplace(16.0f, train_generator(l, 16.0f, RobustMode::RandomNoise));
        l.log.push_back("P-ATN eps 16 trained in " + fmt(since(t1), 1) + " s");
        GeneratorBank bank16;
        bank16.by_epsilon[16.0f] = &l.patn.at(16.0f);
        const auto attacks = baseline_attacks(l, bank16, 16.0f, 3.2f);
        l.baseline = transfer_matrix(attacks, l.named, l.eval.images, DefenseSpec::none());
        l.core_seconds = since(t0);

        l.patn_plain = std::make_unique<GeneratorModel>(train_generator(l, 16.0f, RobustMode::None));
        GeneratorBank plain;
        plain.by_epsilon[16.0f] = l.patn_plain.get();
        const AttackSpec t2[] = {atn_attack("p-atn", bank16, 16.0f, {"cnn-a"}),
                                 atn_attack("p-atn-no-robust", plain, 16.0f, {"cnn-a"})};
        l.noise_report = transfer_matrix(t2, l.named, l.eval.images, DefenseSpec::noise(6.0f, 1), 1);

        l.resize_report = transfer_matrix(attacks, l.named, l.eval.images, DefenseSpec::resize());

        for (float eps : {4.0f, 8.0f, 32.0f}) l.patn.emplace(eps, train_generator(l, eps, RobustMode::RandomNoise));
        GeneratorBank all_bank;
        for (const auto& [eps, g] : l.patn) all_bank.by_epsilon[eps] = &g;
        const float sweep_eps[] = {4.0f, 8.0f, 16.0f, 32.0f};
        l.sweep = epsilon_sweep([&](float eps) { return atn_attack("p-atn", all_bank, eps, {"cnn-a"}); }, l.named,
                                l.eval.images, sweep_eps, DefenseSpec::none());
        AttackConfig mi;
        mi.steps = 10;
        mi.alpha = 10.0f;
        mi.mu = 1.0f;
        l.sweep.append(epsilon_sweep(
            [&](float eps) {
                AttackConfig c = mi;
                c.epsilon = eps;
                return gradient_attack(AttackMethod::MiFgsm, l.named[0], c);
            },
            l.named, l.eval.images, sweep_eps, DefenseSpec::none()));
        l.log.push_back("lab complete in " + fmt(since(t0), 1) + " s");
        return l;
    }();
    return L;
}

double rate(const FoolingReport& r, const std::string& attack, const std::string& model, float eps = 16.0f) {
    for (const auto& row : r.rows) {
        if (row.attack == attack && row.model == model && row.epsilon == eps) return row.fooling_rate();
    }
    throw Error(ErrorCode::InvalidArgument, "no row " + attack + "/" + model);
}

Outcome white_box_rates() {
    Lab& l = lab();
    const double patn = rate(l.baseline, "p-atn", "cnn-a");
    const double mi = rate(l.baseline, "mifgsm", "cnn-a");
    const double fg = rate(l.baseline, "fgsm", "cnn-a");
    const double min_acc = *std::min_element(l.train_accuracy.begin(), l.train_accuracy.end());
    const bool pass = min_acc >= 0.95 && patn >= 0.90 && mi >= 0.90 && fg < mi && l.core_seconds <= 600.0;
    return {pass, "min train accuracy " + fmt(min_acc) + "; white-box P-ATN " + fmt(patn) + ", MI-FGSM " + fmt(mi) +
                      ", FGSM " + fmt(fg) + "; " + fmt(l.core_seconds, 1) + " s"};
}

Outcome transfer_rates() {
    Lab& l = lab();
    bool pass = true;
    std::string detail;
    for (const char* m : {"cnn-b", "cnn-c"}) {
        const double patn = rate(l.baseline, "p-atn", m);
        const double fg = rate(l.baseline, "fgsm", m);
        const double pg = rate(l.baseline, "pgd", m);
        pass = pass && patn >= fg + 0.05 && patn >= pg + 0.05;
        detail += std::string(detail.empty() ? "" : "; ") + m + ": P-ATN " + fmt(patn) + ", FGSM " + fmt(fg) +
                  ", PGD " + fmt(pg);
    }
    return {pass, detail};
}

Outcome noise_defense() {
    Lab& l = lab();
    const std::string mean(kBlackBoxMean);
    const double robust = rate(l.noise_report, "p-atn", mean);
    const double plain = rate(l.noise_report, "p-atn-no-robust", mean);
    return {robust >= plain + 0.05, "noise-defended black-box mean: with noise robust-enhance " + fmt(robust) +
                                        ", without " + fmt(plain) + " (white-box " +
                                        fmt(rate(l.noise_report, "p-atn", "cnn-a")) + " vs " +
                                        fmt(rate(l.noise_report, "p-atn-no-robust", "cnn-a")) + ")"};
}

Outcome resize_defense() {
    Lab& l = lab();
    const std::string mean(kBlackBoxMean);
    const double before = rate(l.baseline, "p-atn", "cnn-a");
    const double after = rate(l.resize_report, "p-atn", "cnn-a");
    const double patn_bb = rate(l.resize_report, "p-atn", mean);
    bool pass = before - after >= 0.10;
    std::string detail = "P-ATN white-box " + fmt(before) + " -> " + fmt(after) + " under resize; black-box mean P-ATN " +
                         fmt(patn_bb);
    for (const char* a : {"fgsm", "pgd", "mifgsm"}) {
        const double r = rate(l.resize_report, a, mean);
        pass = pass && patn_bb >= r;
        detail += std::string(", ") + a + " " + fmt(r);
    }
    return {pass, detail};
}

Outcome budget_sweep() {
    Lab& l = lab();
    const std::string mean(kBlackBoxMean);
    bool pass = true;
    std::string detail;
    double prev = -1.0;
    for (float eps : {4.0f, 8.0f, 16.0f, 32.0f}) {
        const double mi_wb = rate(l.sweep, "mifgsm", "cnn-a", eps);
        const double patn_bb = rate(l.sweep, "p-atn", mean, eps);
        const double mi_bb = rate(l.sweep, "mifgsm", mean, eps);
        pass = pass && mi_wb >= 0.9;
        if (prev >= 0.0) pass = pass && patn_bb >= prev - 0.05;
        if (eps >= 8.0f) pass = pass && patn_bb >= mi_bb;
        prev = patn_bb;
        detail += std::string(detail.empty() ? "" : "; ") + "eps " + fmt(eps, 0) + ": MI-FGSM white-box " +
                  fmt(mi_wb) + ", black-box P-ATN " + fmt(patn_bb) + " vs MI-FGSM " + fmt(mi_bb);
    }
    return {pass, detail};
}

// ---------------------------------------------------------------------------
// 10. determinism through the CLI

int run_cli(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = std::string(ATNLAB_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "atnlab_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path log = dir / "cli.log";
    const std::string data = " --synth-count 200 --classes 4 --side 16";
    auto p = [&](const std::string& name) { return (dir / name).string(); };

    struct Step {
        std::string first, rerun_out, primary;
    };
    const std::vector<Step> steps = {
        {"train-classifier --arch cnn-a --seed 1 --epochs 2" + data + " --out " + p("a.ckpt"), p("a2.ckpt"),
         p("a.ckpt")},
        {"train-classifier --arch cnn-b --seed 1 --epochs 2" + data + " --out " + p("b.ckpt"), p("b2.ckpt"),
         p("b.ckpt")},
        {"train-atn --targets " + p("a.ckpt") + ":1.0," + p("b.ckpt") + ":0.5 --robust noise --beta 6 --eps 16"
         " --gamma -0.9 --seed 1 --epochs 1" + data + " --out " + p("g.ckpt"),
         p("g2.ckpt"), p("g.ckpt")},
        {"attack --method mifgsm --steps 10 --mu 1.0 --eps 16 --model " + p("a.ckpt") + " --limit 16" + data +
             " --out " + p("adv.atn"),
         p("adv2.atn"), p("adv.atn")},
        {"eval --models " + p("a.ckpt") + "," + p("b.ckpt") + " --attacks fgsm,pgd,mifgsm,atn --target " +
             p("a.ckpt") + " --generators " + p("g.ckpt") + " --eps 16 --defense noise:6 --limit 32" + data +
             " --out " + p("r.csv"),
         p("r2.csv"), p("r.csv")},
        {"eval --models " + p("a.ckpt") + "," + p("b.ckpt") + " --archives " + p("adv.atn") + " --defense resize" +
             data + " --out " + p("s.csv"),
         p("s2.csv"), p("s.csv")},
    };
    int same = 0;
    std::string failures;
    for (const auto& s : steps) {
        if (run_cli(s.first, log) != 0) {
            failures += " [failed: " + s.first.substr(0, s.first.find(' ')) + "]";
            continue;
        }
        const std::string command = s.first.substr(0, s.first.find(' '));
        if (run_cli(command + " --config " + s.primary + ".manifest.json --out " + s.rerun_out, log) != 0) {
            failures += " [rerun failed: " + command + "]";
            continue;
        }
        if (file_hash(s.primary) == file_hash(s.rerun_out)) {
            ++same;
        } else {
            failures += " [differs: " + fs::path(s.primary).filename().string() + "]";
        }
    }
    fs::remove_all(dir);
    return {same == static_cast<int>(steps.size()),
            std::to_string(same) + "/" + std::to_string(steps.size()) + " manifest reruns byte-identical" + failures};
}

// ---------------------------------------------------------------------------
// 11. noise calibration

Outcome noise_calibration() {
    // mid-grey, so the [0, 255] clamp never engages
    Tensor x(Shape{1, 1000, 1000});
    for (auto& v : x.data()) v = 127.5f;
    RngStream rng(1111);
    const Tensor y = apply_random_noise(x, 6.0f, rng);
    double sum = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) sum += std::abs(double(y[i]) - double(x[i]));
    const double mean = sum / static_cast<double>(y.numel());
    return {mean >= 5.9 && mean <= 6.1, "mean |u| over 10^6 draws at beta 6: " + fmt(mean, 4)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    std::filesystem::path report_dir;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string item;
            while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
        } else if (arg == "--report-dir" && i + 1 < argc) {
            report_dir = argv[++i];
        } else {
            std::cerr << "usage: atnlab_acceptance [--only 1,2,...] [--report-dir DIR]\n";
            return 2;
        }
    }
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {1, gradients},        {2, budgets},      {3, degeneracies}, {4, loss_algebra},
        {5, white_box_rates}, {6, transfer_rates}, {7, noise_defense}, {8, resize_defense},
        {9, budget_sweep},       {10, determinism}, {11, noise_calibration},
    };
    int failed = 0;
    bool lab_used = false;
    for (const auto& [id, fn] : criteria) {
        if (!only.empty() && !only.count(id)) continue;
        lab_used = lab_used || (id >= 5 && id <= 9);
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    }
    if (lab_used) {
        for (const auto& line : lab().log) std::cout << "  lab: " << line << "\n";
        if (!report_dir.empty()) {
            std::filesystem::create_directories(report_dir);
            const std::pair<const char*, const FoolingReport*> reports[] = {
                {"transfer.csv", &lab().baseline}, {"noise_defense.csv", &lab().noise_report},
                {"resize_defense.csv", &lab().resize_report}, {"eps_sweep.csv", &lab().sweep}};
            for (const auto& [name, r] : reports) std::ofstream(report_dir / name) << r->to_csv();
        }
    }
    return failed == 0 ? 0 : 1;
}
