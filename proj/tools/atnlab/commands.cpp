#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>

#include "atnlab/attacks.hpp"
#include "atnlab/budget.hpp"
#include "atnlab/container.hpp"
#include "atnlab/error.hpp"
#include "atnlab/eval.hpp"

namespace atnlab::cli {

namespace {

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

struct Target {
    std::filesystem::path path;
    float weight = 1.0f;
};

// a.ckpt:1.0,b.ckpt:0.5 -- the weight suffix is optional.
std::vector<Target> parse_targets(const std::string& text) {
    std::vector<Target> out;
    for (const auto& item : split_list(text)) {
        Target t{item, 1.0f};
        const auto colon = item.rfind(':');
        if (colon != std::string::npos) {
            const std::string w = item.substr(colon + 1);
            float v = 0;
            const auto r = std::from_chars(w.data(), w.data() + w.size(), v);
            if (r.ec == std::errc{} && r.ptr == w.data() + w.size()) {
                t.path = item.substr(0, colon);
                t.weight = v;
            }
        }
        out.push_back(t);
    }
    if (out.empty()) {
        throw UsageError("--targets is empty");
    }
    return out;
}

void require_file(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::is_regular_file(path)) {
        fail(ErrorCode::Io, what + " not found: " + path.string());
    }
}

struct LoadedModels {
    std::vector<std::unique_ptr<ClassifierModel>> owned;
    std::vector<NamedModel> named;

    const NamedModel& add(const std::filesystem::path& path, Manifest& manifest) {
        require_file(path, "model checkpoint");
        const std::string id = stem_id(path);
        for (const auto& m : named) {
            if (m.id == id) {
                return m;
            }
        }
        owned.push_back(std::make_unique<ClassifierModel>(load_classifier(path)));
        manifest.input(path);
        named.push_back({id, owned.back().get()});
        return named.back();
    }
};

struct LoadedGenerators {
    std::vector<std::unique_ptr<GeneratorModel>> owned;
    GeneratorBank bank;
    std::vector<std::string> white_box;

    void load(const std::string& list, Manifest& manifest) {
        for (const auto& p : split_list(list)) {
            require_file(p, "generator checkpoint");
            Metadata meta;
            owned.push_back(std::make_unique<GeneratorModel>(load_generator(p, &meta)));
            manifest.input(p);
            const float eps = owned.back()->epsilon_train;
            if (bank.by_epsilon.contains(eps)) {
                throw UsageError("two generators trained at epsilon " + fmt(eps));
            }
            bank.by_epsilon[eps] = owned.back().get();
            if (meta.contains("targets")) {
                for (const auto& t : split_list(meta.at("targets"))) {
                    if (std::find(white_box.begin(), white_box.end(), t) == white_box.end()) {
                        white_box.push_back(t);
                    }
                }
            }
        }
        if (bank.by_epsilon.empty()) {
            throw UsageError("--generators is empty");
        }
    }
};

AttackConfig attack_config(const RunConfig& cfg, float eps, bool sweep) {
    AttackConfig ac;
    ac.epsilon = eps;
    ac.steps = static_cast<int>(cfg.integer("steps"));
    ac.mu = static_cast<float>(cfg.num("mu"));
    if (cfg.has("alpha")) {
        ac.alpha = static_cast<float>(cfg.num("alpha"));
    } else if (sweep) {
        ac.alpha = 10.0f;
    } else {
        ac.alpha = 2.0f * eps / static_cast<float>(std::max(ac.steps, 1));
    }
    ac.validate();
    return ac;
}

void attack_flags(RunConfig& cfg) {
    cfg.flag("steps", 10, "iterations for pgd and mifgsm");
    cfg.flag("alpha", nullptr, "step size in pixels [2*eps/steps; 10 for sweeps]");
    cfg.flag("mu", 1.0, "momentum decay for mifgsm");
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    const Shape& s = image.shape();
    const auto c = static_cast<std::size_t>(s[0]);
    const auto h = static_cast<std::size_t>(s[1]);
    const auto w = static_cast<std::size_t>(s[2]);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t k = 0; k < 3; ++k) {
                const std::size_t ch = c == 3 ? k : 0;
                const float v = std::clamp(std::round(image[(ch * h + y) * w + x]), 0.0f, 255.0f);
                out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
            }
        }
    }
    write_text(path, out);
}

Dataset limited(Dataset data, long long limit) {
    if (limit > 0 && static_cast<std::size_t>(limit) < data.size()) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(limit));
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        data = data.subset(idx);
    }
    return data;
}

std::string timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

}  // namespace

void setup_train_classifier(CLI::App* app, RunConfig& cfg) {
    cfg.required("out", Json::value_t::string, "checkpoint path");
    cfg.flag("arch", "cnn-a", "cnn-a | cnn-b | cnn-c");
    cfg.flag("seed", 1, "initialization and shuffling seed");
    cfg.flag("epochs", 15, "training epochs");
    cfg.flag("batch", 32, "batch size");
    cfg.flag("lr", 0.05, "learning rate");
    cfg.flag("momentum", 0.9, "SGD momentum");
    cfg.flag("label-smoothing", 0.1, "label smoothing");
    add_data_flags(cfg, "train");
    (void)app;
}

int run_train_classifier(const RunConfig& cfg) {
    const std::filesystem::path out = cfg.str("out");
    check_writable(out);
    Manifest manifest("train-classifier", cfg);
    const Dataset data = resolve_dataset(cfg);
    manifest.dataset(data);
    ClassifierModel model =
        build_classifier(cfg.str("arch"), data.num_classes, data.image_shape(), cfg.seed("seed"));
    ClassifierTrainConfig tc;
    tc.epochs = static_cast<int>(cfg.integer("epochs"));
    tc.batch_size = static_cast<int>(cfg.integer("batch"));
    tc.learning_rate = static_cast<float>(cfg.num("lr"));
    tc.momentum = static_cast<float>(cfg.num("momentum"));
    tc.label_smoothing = static_cast<float>(cfg.num("label-smoothing"));
    tc.seed = cfg.seed("seed");
    const auto log = fit_classifier(model, data, tc);
    for (const auto& e : log) {
        std::cerr << "epoch " << e.epoch << " loss " << fmt(e.loss) << " accuracy " << fmt(e.accuracy) << "\n";
    }
    save_checkpoint(model, out,
                    {{"seed", std::to_string(tc.seed)},
                     {"epochs", std::to_string(tc.epochs)},
                     {"dataset_id", data.id},
                     {"train_accuracy", fmt(log.back().accuracy)}});
    manifest.output(out);
    manifest.set("train_accuracy", log.back().accuracy);
    manifest.write(out);
    std::cout << "train accuracy " << fmt(log.back().accuracy) << "\n";
    return 0;
}

void setup_train_atn(CLI::App* app, RunConfig& cfg) {
    cfg.required("out", Json::value_t::string, "generator checkpoint path");
    cfg.required("targets", Json::value_t::string, "target checkpoints with optional weights, a.ckpt:1.0,b.ckpt:0.5");
    cfg.flag("loss", "prediction", "feature | prediction | true-label");
    cfg.flag("robust", "noise", "none | noise | pretrained-filter | training-filter");
    cfg.flag("beta", 6.0, "robust-enhance noise mean magnitude");
    cfg.flag("filter", "", "filter checkpoint for the filter modes (pretrained on the data when empty)");
    cfg.flag("filter-prob", 0.5, "probability of the filter branch per batch");
    cfg.flag("eps", 16.0, "L-inf budget in pixels");
    cfg.flag("gamma", -0.9, "ensemble threshold in [-1, 0]");
    cfg.flag("seed", 1, "generator initialization and training seed");
    cfg.flag("epochs", 20, "training epochs");
    cfg.flag("batch", 32, "batch size");
    cfg.flag("lr", 0.03, "generator learning rate");
    cfg.flag("filter-lr", 0.001, "training-filter learning rate");
    add_data_flags(cfg, "train");
    (void)app;
}

int run_train_atn(const RunConfig& cfg) {
    const std::filesystem::path out = cfg.str("out");
    check_writable(out);
    Manifest manifest("train-atn", cfg);
    const auto targets = parse_targets(cfg.str("targets"));
    std::vector<std::unique_ptr<ClassifierModel>> models;
    std::vector<const ClassifierModel*> ptrs;
    std::vector<float> weights;
    std::string target_ids;
    for (const auto& t : targets) {
        require_file(t.path, "target checkpoint");
        models.push_back(std::make_unique<ClassifierModel>(load_classifier(t.path)));
        manifest.input(t.path);
        ptrs.push_back(models.back().get());
        weights.push_back(t.weight);
        target_ids += (target_ids.empty() ? "" : ",") + stem_id(t.path);
    }

    AtnTrainConfig tc;
    const std::string loss = cfg.str("loss");
    if (loss == "feature") {
        tc.loss.kind = LossKind::Feature;
    } else if (loss == "prediction") {
        tc.loss.kind = LossKind::Prediction;
    } else if (loss == "true-label") {
        tc.loss.kind = LossKind::TrueLabel;
    } else {
        throw UsageError("--loss must be feature, prediction or true-label");
    }
    tc.loss.gamma = static_cast<float>(cfg.num("gamma"));
    tc.loss.weights = weights;
    tc.loss.validate();
    tc.robust.mode = parse_robust_mode(cfg.str("robust"));
    tc.robust.beta = static_cast<float>(cfg.num("beta"));
    tc.robust.filter_choice_prob = static_cast<float>(cfg.num("filter-prob"));
    tc.robust.seed = cfg.seed("seed");
    tc.targets = ptrs;
    tc.epsilon = static_cast<float>(cfg.num("eps"));
    tc.learning_rate = static_cast<float>(cfg.num("lr"));
    tc.filter_learning_rate = static_cast<float>(cfg.num("filter-lr"));
    tc.epochs = static_cast<int>(cfg.integer("epochs"));
    tc.batch_size = static_cast<int>(cfg.integer("batch"));
    tc.seed = cfg.seed("seed");

    const Dataset data = resolve_dataset(cfg);
    manifest.dataset(data);
    const bool filter_mode =
        tc.robust.mode == RobustMode::PretrainedFilter || tc.robust.mode == RobustMode::TrainingFilter;
    if (filter_mode) {
        if (cfg.has("filter")) {
            const std::filesystem::path fp = cfg.str("filter");
            require_file(fp, "filter checkpoint");
            tc.robust.filter = std::make_shared<FilterModel>(load_filter(fp));
            manifest.input(fp);
        } else {
            auto filter = std::make_shared<FilterModel>(build_filter(data.image_shape(), tc.seed));
            FilterTrainConfig fc;
            fc.noise_beta = tc.robust.beta;
            fc.seed = tc.seed;
            pretrain_filter(*filter, data, fc);
            tc.robust.filter = filter;
        }
    }
    tc.validate();

    GeneratorModel gen = build_generator(data.image_shape(), tc.epsilon, tc.seed);
    const TrainingLog log = train_atn(gen, tc, data);
    Json epochs = Json::array();
    for (const auto& e : log.epochs) {
        std::cerr << "epoch " << e.epoch << " loss " << fmt(e.loss) << " fooling " << fmt(e.fooling_rate) << "\n";
        epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"fooling_rate", e.fooling_rate}});
    }
    save_checkpoint(gen, out,
                    {{"seed", std::to_string(tc.seed)},
                     {"epochs", std::to_string(tc.epochs)},
                     {"dataset_id", data.id},
                     {"targets", target_ids},
                     {"loss", loss},
                     {"robust", std::string(to_string(tc.robust.mode))}});
    manifest.output(out);
    if (tc.robust.mode == RobustMode::TrainingFilter) {
        const std::filesystem::path fout = out.string() + ".filter.ckpt";
        save_checkpoint(*tc.robust.filter, fout, {{"dataset_id", data.id}});
        manifest.output(fout);
    }
    manifest.set("training_log", epochs);
    manifest.write(out);
    std::cout << "white-box fooling rate " << fmt(log.epochs.back().fooling_rate) << "\n";
    return 0;
}

void setup_attack(CLI::App* app, RunConfig& cfg) {
    cfg.required("out", Json::value_t::string, "adversarial archive path");
    cfg.required("eps", Json::value_t::number_float, "L-inf budget in pixels");
    cfg.flag("method", "mifgsm", "fgsm | pgd | mifgsm | atn");
    cfg.flag("model", "", "white-box classifier checkpoint (gradient methods)");
    cfg.flag("generators", "", "generator checkpoints for atn, comma separated");
    cfg.flag("limit", 0, "attack only the first N images (0 = all)");
    cfg.flag("ppm-dir", "", "also dump adversarial images as PPM files here");
    attack_flags(cfg);
    add_data_flags(cfg, "eval");
    (void)app;
}

int run_attack(const RunConfig& cfg) {
    const std::filesystem::path out = cfg.str("out");
    check_writable(out);
    Manifest manifest("attack", cfg);
    const AttackMethod method = parse_attack_method(cfg.str("method"));
    const auto eps = static_cast<float>(cfg.num("eps"));
    if (!(eps > 0.0f)) {
        throw UsageError("--eps must be > 0");
    }
    const Dataset data = limited(resolve_dataset(cfg), cfg.integer("limit"));
    manifest.dataset(data);

    LoadedModels models;
    LoadedGenerators gens;
    AttackSpec spec;
    float served = eps;
    if (method == AttackMethod::Atn) {
        if (!cfg.has("generators")) {
            throw UsageError("--method atn needs --generators");
        }
        gens.load(cfg.str("generators"), manifest);
        const auto budgets = gens.bank.budgets();
        served = select_trained_epsilon(budgets, eps);
        spec = atn_attack("atn", gens.bank, eps, gens.white_box);
    } else {
        if (!cfg.has("model")) {
            throw UsageError("gradient methods need --model");
        }
        const NamedModel& target = models.add(cfg.str("model"), manifest);
        spec = gradient_attack(method, target, attack_config(cfg, eps, false));
    }
    const Tensor adv = atnlab::run_attack(spec, data.images);
    validate_budget(data.images, adv, eps);

    Container archive;
    archive.kind = "adversarial";
    archive.metadata = {{"attack", spec.id},
                        {"method", std::string(to_string(method))},
                        {"dataset_id", data.id},
                        {"served_by_epsilon", fmt(served)}};
    std::string wb;
    for (const auto& w : spec.white_box) {
        wb += (wb.empty() ? "" : ",") + w;
    }
    archive.metadata["white_box"] = wb;
    Tensor labels(Shape{static_cast<std::int64_t>(data.size())});
    for (std::size_t i = 0; i < data.size(); ++i) {
        labels[i] = static_cast<float>(data.labels[i]);
    }
    archive.tensors = {{"clean", data.images},
                       {"adversarial", adv},
                       {"labels", labels},
                       {"epsilon", Tensor(Shape{static_cast<std::int64_t>(data.size())}, eps)}};
    save_container(out, archive);
    manifest.output(out);

    if (cfg.has("ppm-dir")) {
        const std::filesystem::path dir = cfg.str("ppm-dir");
        std::filesystem::create_directories(dir);
        for (std::size_t i = 0; i < data.size(); ++i) {
            write_ppm(dir / ("adv_" + std::to_string(i) + ".ppm"), adv.row(i));
        }
    }
    manifest.set("served_by_epsilon", served);
    manifest.write(out);
    std::cout << "wrote " << data.size() << " adversarial images (eps " << fmt(eps) << ")\n";
    return 0;
}

void setup_eval(CLI::App* app, RunConfig& cfg) {
    cfg.required("out", Json::value_t::string, "CSV report path");
    cfg.required("models", Json::value_t::string, "classifier checkpoints to evaluate, comma separated");
    cfg.flag("json", "", "also write the JSON report here");
    cfg.flag("archives", "", "adversarial archives to score, comma separated");
    cfg.flag("attacks", "", "attacks to run instead: fgsm,pgd,mifgsm,atn");
    cfg.flag("target", "", "white-box checkpoint for gradient attacks");
    cfg.flag("generators", "", "generator checkpoints for atn");
    cfg.flag("eps", 16.0, "budget for --attacks");
    cfg.flag("sweep-eps", "", "ascending budgets, e.g. 4,8,16,32");
    cfg.flag("defense", "none", "none | resize | noise:<beta>");
    cfg.flag("defense-seed", 0, "seed for the noise defense");
    cfg.flag("seed", 0, "seed recorded in report rows");
    cfg.flag("limit", 0, "evaluate only the first N images (0 = all)");
    attack_flags(cfg);
    add_data_flags(cfg, "eval");
    (void)app;
}

int run_eval(const RunConfig& cfg) {
    const std::filesystem::path out = cfg.str("out");
    check_writable(out);
    Manifest manifest("eval", cfg);
    const DefenseSpec defense = parse_defense(cfg.str("defense"), cfg.seed("defense-seed"));
    const std::uint64_t seed = cfg.seed("seed");
    LoadedModels models;
    for (const auto& p : split_list(cfg.str("models"))) {
        models.add(p, manifest);
    }
    if (models.named.empty()) {
        throw UsageError("--models is empty");
    }

    FoolingReport report;
    std::string dataset_id;
    if (cfg.has("archives")) {
        for (const auto& p : split_list(cfg.str("archives"))) {
            require_file(p, "archive");
            const Container c = load_container(p);
            if (c.kind != "adversarial") {
                fail(ErrorCode::CorruptHeader, p + " is not an adversarial archive (kind '" + c.kind + "')");
            }
            manifest.input(p);
            const Tensor& clean = c.tensor("clean");
            const Tensor& adv = c.tensor("adversarial");
            const Tensor& eps = c.tensor("epsilon");
            float eps_max = 0.0f;
            for (std::size_t i = 0; i < eps.numel(); ++i) {
                validate_budget(clean.row(i), adv.row(i), eps[i]);
                eps_max = std::max(eps_max, eps[i]);
            }
            AttackSpec spec;
            spec.id = c.metadata.contains("attack") ? c.metadata.at("attack") : stem_id(p);
            spec.epsilon = eps_max;
            if (c.metadata.contains("white_box")) {
                spec.white_box = split_list(c.metadata.at("white_box"));
            }
            std::erase_if(spec.white_box, [&](const std::string& w) {
                return std::none_of(models.named.begin(), models.named.end(),
                                    [&](const NamedModel& m) { return m.id == w; });
            });
            report.append(score_attack(spec, clean, adv, models.named, defense, seed));
            if (c.metadata.contains("dataset_id")) {
                dataset_id = c.metadata.at("dataset_id");
            }
        }
    } else if (cfg.has("attacks")) {
        const Dataset data = limited(resolve_dataset(cfg), cfg.integer("limit"));
        dataset_id = data.id;
        const bool sweep = cfg.has("sweep-eps");
        std::vector<float> eps_list = sweep ? parse_floats(cfg.str("sweep-eps"))
                                            : std::vector<float>{static_cast<float>(cfg.num("eps"))};
        LoadedGenerators gens;
        for (const auto& name : split_list(cfg.str("attacks"))) {
            const AttackMethod method = parse_attack_method(name);
            std::function<AttackSpec(float)> factory;
            if (method == AttackMethod::Atn) {
                if (gens.bank.by_epsilon.empty()) {
                    if (!cfg.has("generators")) {
                        throw UsageError("atn needs --generators");
                    }
                    gens.load(cfg.str("generators"), manifest);
                }
                std::vector<std::string> wb;
                for (const auto& w : gens.white_box) {
                    if (std::any_of(models.named.begin(), models.named.end(),
                                    [&](const NamedModel& m) { return m.id == w; })) {
                        wb.push_back(w);
                    }
                }
                factory = [&gens, wb](float eps) { return atn_attack("atn", gens.bank, eps, wb); };
            } else {
                if (!cfg.has("target")) {
                    throw UsageError(name + " needs --target");
                }
                const NamedModel target = models.add(cfg.str("target"), manifest);
                factory = [&cfg, method, target, sweep](float eps) {
                    return gradient_attack(method, target, attack_config(cfg, eps, sweep));
                };
            }
            report.append(epsilon_sweep(factory, models.named, data.images, eps_list, defense, seed));
        }
    } else {
        throw UsageError("eval needs --archives or --attacks");
    }

    report.metadata["dataset_id"] = dataset_id;
    report.metadata["version"] = ATNLAB_VERSION;
    report.metadata["timestamp"] = timestamp();
    write_text(out, report.to_csv());
    manifest.output(out);
    if (cfg.has("json")) {
        const std::filesystem::path jp = cfg.str("json");
        check_writable(jp);
        write_text(jp, report.to_json());
    }
    manifest.set("dataset_id", dataset_id);
    manifest.write(out);
    std::cout << report.to_csv();
    return 0;
}

}  // namespace atnlab::cli
