#include "atnlab/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "atnlab/budget.hpp"
#include "atnlab/error.hpp"
#include "atnlab/parallel.hpp"
#include "atnlab/robust.hpp"

namespace atnlab {

namespace {

template <typename T>
std::string shortest(T value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

std::int64_t scaled_side(std::int64_t side, double factor) {
    const auto out = static_cast<std::int64_t>(std::llround(factor * static_cast<double>(side)));
    require(out >= 1, ErrorCode::InvalidArgument,
            "resize factor " + shortest(factor) + " maps side " + std::to_string(side) + " to " +
                std::to_string(out));
    return out;
}

// Source coordinate for output index `o` with half-pixel centres.
struct Tap {
    std::int64_t lo, hi;
    float w;
};

std::vector<Tap> taps(std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::int64_t>(std::floor(src));
        const std::int64_t hi = std::min(lo + 1, in - 1);
        t[static_cast<std::size_t>(o)] = {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
    }
    return t;
}

std::size_t batch_rows(const Tensor& images) {
    require(images.shape().rank() == 4, ErrorCode::ShapeMismatch,
            "expected a batch [B,C,H,W], got " + images.shape().to_string());
    return static_cast<std::size_t>(images.shape()[0]);
}

}  // namespace

DefenseSpec DefenseSpec::resize(std::vector<double> factors) {
    DefenseSpec d;
    d.kind = DefenseKind::ResizeChain;
    d.factors = std::move(factors);
    return d;
}

DefenseSpec DefenseSpec::noise(float beta, std::uint64_t seed) {
    DefenseSpec d;
    d.kind = DefenseKind::RandomNoise;
    d.beta = beta;
    d.seed = seed;
    return d;
}

std::string DefenseSpec::id() const {
    switch (kind) {
        case DefenseKind::None: return "none";
        case DefenseKind::ResizeChain: return "resize";
        case DefenseKind::RandomNoise: return "noise:" + shortest(beta);
    }
    return "none";
}

void DefenseSpec::validate() const {
    if (kind == DefenseKind::ResizeChain) {
        for (double f : factors) {
            require(f > 0.0 && std::isfinite(f), ErrorCode::InvalidArgument, "resize factors must be positive");
        }
    }
    if (kind == DefenseKind::RandomNoise) {
        require(beta >= 0.0f && std::isfinite(beta), ErrorCode::InvalidArgument, "noise beta must be >= 0");
    }
}

DefenseSpec parse_defense(std::string_view text, std::uint64_t seed) {
    if (text == "none") {
        return DefenseSpec::none();
    }
    if (text == "resize") {
        return DefenseSpec::resize();
    }
    if (text.starts_with("noise:")) {
        const std::string_view num = text.substr(6);
        float beta = 0.0f;
        const auto res = std::from_chars(num.data(), num.data() + num.size(), beta);
        require(res.ec == std::errc{} && res.ptr == num.data() + num.size(), ErrorCode::InvalidArgument,
                "bad noise beta in defense '" + std::string(text) + "'");
        DefenseSpec d = DefenseSpec::noise(beta, seed);
        d.validate();
        return d;
    }
    fail(ErrorCode::InvalidArgument, "unknown defense '" + std::string(text) + "' (none, resize, noise:<beta>)");
}

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
    const Shape& s = image.shape();
    require(s.rank() == 3 || s.rank() == 4, ErrorCode::ShapeMismatch,
            "resize expects [C,H,W] or [B,C,H,W], got " + s.to_string());
    require(out_h >= 1 && out_w >= 1, ErrorCode::InvalidArgument, "resize target must be >= 1 pixel");
    const std::int64_t in_h = s[s.rank() - 2];
    const std::int64_t in_w = s[s.rank() - 1];
    const std::size_t planes = image.numel() / static_cast<std::size_t>(in_h * in_w);
    std::vector<std::int64_t> dims = s.dims();
    dims[s.rank() - 2] = out_h;
    dims[s.rank() - 1] = out_w;
    Tensor out{Shape(dims)};
    const auto ty = taps(in_h, out_h);
    const auto tx = taps(in_w, out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = image.data().data() + p * static_cast<std::size_t>(in_h * in_w);
        float* dst = out.data().data() + p * static_cast<std::size_t>(out_h * out_w);
        for (std::int64_t y = 0; y < out_h; ++y) {
            const Tap& a = ty[static_cast<std::size_t>(y)];
            for (std::int64_t x = 0; x < out_w; ++x) {
                const Tap& b = tx[static_cast<std::size_t>(x)];
                const float top = src[a.lo * in_w + b.lo] + b.w * (src[a.lo * in_w + b.hi] - src[a.lo * in_w + b.lo]);
                const float bot = src[a.hi * in_w + b.lo] + b.w * (src[a.hi * in_w + b.hi] - src[a.hi * in_w + b.lo]);
                dst[y * out_w + x] = top + a.w * (bot - top);
            }
        }
    }
    return out;
}

Tensor resize_chain(const Tensor& image, std::span<const double> factors) {
    if (factors.empty()) {
        return image;
    }
    const Shape& s = image.shape();
    require(s.rank() == 3 || s.rank() == 4, ErrorCode::ShapeMismatch,
            "resize expects [C,H,W] or [B,C,H,W], got " + s.to_string());
    const std::int64_t h = s[s.rank() - 2];
    const std::int64_t w = s[s.rank() - 1];
    Tensor cur = image;
    for (double f : factors) {
        require(f > 0.0 && std::isfinite(f), ErrorCode::InvalidArgument, "resize factors must be positive");
        cur = resize_bilinear(cur, scaled_side(h, f), scaled_side(w, f));
    }
    return resize_bilinear(cur, h, w);
}

Tensor apply_defense(const Tensor& images, const DefenseSpec& defense, std::size_t first_index) {
    defense.validate();
    switch (defense.kind) {
        case DefenseKind::None: return images;
        case DefenseKind::ResizeChain: return resize_chain(images, defense.factors);
        case DefenseKind::RandomNoise: {
            const std::size_t rows = batch_rows(images);
            const RngStream base(defense.seed);
            std::vector<Tensor> out(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                RngStream rng = base.fork(first_index + i);
                out[i] = apply_random_noise(images.slice_rows(i, i + 1), defense.beta, rng);
            }
            return Tensor::concat_rows(out);
        }
    }
    return images;
}

double FoolingCount::rate() const {
    require(total > 0, ErrorCode::InvalidArgument, "fooling rate over zero images");
    return static_cast<double>(fooled) / static_cast<double>(total);
}

FoolingCount count_fooled(const ClassifierModel& model, const Tensor& clean, const Tensor& adv,
                          const DefenseSpec& defense, float epsilon) {
    require(clean.shape() == adv.shape(), ErrorCode::ShapeMismatch,
            "clean " + clean.shape().to_string() + " vs adversarial " + adv.shape().to_string());
    validate_budget(clean, adv, epsilon);
    const bool single = clean.shape() == model.graph.sample_shape();
    const Tensor c = single ? clean.reshaped(clean.shape().prepend(1)) : clean;
    const Tensor a = single ? adv.reshaped(adv.shape().prepend(1)) : adv;
    const std::size_t rows = batch_rows(c);
    require(rows > 0, ErrorCode::InvalidArgument, "no images to evaluate");

    constexpr std::size_t kChunk = 128;
    const std::size_t chunks = (rows + kChunk - 1) / kChunk;
    std::vector<std::size_t> fooled(chunks, 0);
    parallel_for(chunks, [&](std::size_t k) {
        const std::size_t begin = k * kChunk;
        const std::size_t end = std::min(rows, begin + kChunk);
        // The reference label never sees the defense.
        const std::vector<int> ref = predict(model, c.slice_rows(begin, end));
        const std::vector<int> got = predict(model, apply_defense(a.slice_rows(begin, end), defense, begin));
        for (std::size_t i = 0; i < ref.size(); ++i) {
            fooled[k] += ref[i] != got[i];
        }
    });
    FoolingCount out;
    out.total = rows;
    for (std::size_t f : fooled) {
        out.fooled += f;
    }
    return out;
}

double fooling_rate(const ClassifierModel& model, const Tensor& clean, const Tensor& adv, const DefenseSpec& defense,
                    float epsilon) {
    return count_fooled(model, clean, adv, defense, epsilon).rate();
}

AttackMethod parse_attack_method(std::string_view text) {
    if (text == "fgsm") return AttackMethod::Fgsm;
    if (text == "pgd") return AttackMethod::Pgd;
    if (text == "mifgsm" || text == "mi-fgsm") return AttackMethod::MiFgsm;
    if (text == "atn") return AttackMethod::Atn;
    fail(ErrorCode::InvalidArgument, "unknown attack method '" + std::string(text) + "' (fgsm, pgd, mifgsm, atn)");
}

std::string_view to_string(AttackMethod method) {
    switch (method) {
        case AttackMethod::Fgsm: return "fgsm";
        case AttackMethod::Pgd: return "pgd";
        case AttackMethod::MiFgsm: return "mifgsm";
        case AttackMethod::Atn: return "atn";
    }
    return "?";
}

AttackSpec gradient_attack(AttackMethod method, const NamedModel& target, const AttackConfig& cfg) {
    require(target.model != nullptr, ErrorCode::InvalidArgument, "attack target missing");
    cfg.validate();
    AttackSpec spec;
    spec.id = std::string(to_string(method));
    spec.epsilon = cfg.epsilon;
    spec.white_box = {target.id};
    const ClassifierModel* m = target.model;
    switch (method) {
        case AttackMethod::Fgsm: spec.run = [m, cfg](const Tensor& x) { return fgsm(*m, x, cfg); }; break;
        case AttackMethod::Pgd: spec.run = [m, cfg](const Tensor& x) { return pgd(*m, x, cfg); }; break;
        case AttackMethod::MiFgsm: spec.run = [m, cfg](const Tensor& x) { return mi_fgsm(*m, x, cfg); }; break;
        case AttackMethod::Atn: fail(ErrorCode::InvalidArgument, "atn is not a gradient attack");
    }
    return spec;
}

float select_trained_epsilon(std::span<const float> trained, float requested) {
    require(requested > 0.0f && std::isfinite(requested), ErrorCode::InvalidArgument,
            "epsilon must be > 0, got " + shortest(requested));
    require(!trained.empty(), ErrorCode::InvalidArgument, "no trained generator budgets");
    float best = 0.0f;
    bool found = false;
    for (float t : trained) {
        if (t >= requested && (!found || t < best)) {
            best = t;
            found = true;
        }
    }
    require(found, ErrorCode::InvalidArgument,
            "requested epsilon " + shortest(requested) + " exceeds the largest trained epsilon " +
                shortest(*std::max_element(trained.begin(), trained.end())));
    return best;
}

std::vector<float> GeneratorBank::budgets() const {
    std::vector<float> out;
    for (const auto& [eps, gen] : by_epsilon) {
        out.push_back(eps);
    }
    return out;
}

Tensor GeneratorBank::generate(const Tensor& images, float epsilon) const {
    const std::vector<float> trained = budgets();
    const float use = select_trained_epsilon(trained, epsilon);
    Tensor adv = generate_adversarial(*by_epsilon.at(use), images, use);
    if (use != epsilon) {
        project_linf(images.data(), adv.data(), epsilon);
    }
    return adv;
}

AttackSpec atn_attack(std::string id, const GeneratorBank& bank, float epsilon, std::vector<std::string> white_box) {
    const std::vector<float> trained = bank.budgets();
    select_trained_epsilon(trained, epsilon);
    AttackSpec spec;
    spec.id = std::move(id);
    spec.epsilon = epsilon;
    spec.white_box = std::move(white_box);
    spec.run = [bank, epsilon](const Tensor& x) { return bank.generate(x, epsilon); };
    return spec;
}

Tensor run_attack(const AttackSpec& attack, const Tensor& images, std::size_t chunk) {
    require(static_cast<bool>(attack.run), ErrorCode::InvalidArgument, "attack '" + attack.id + "' has no runner");
    const std::size_t rows = batch_rows(images);
    chunk = std::max<std::size_t>(chunk, 1);
    const std::size_t chunks = (rows + chunk - 1) / chunk;
    std::vector<Tensor> parts(chunks);
    parallel_for(chunks, [&](std::size_t k) {
        const std::size_t begin = k * chunk;
        parts[k] = attack.run(images.slice_rows(begin, std::min(rows, begin + chunk)));
    });
    Tensor out = Tensor::concat_rows(parts);
    require(out.shape() == images.shape(), ErrorCode::ShapeMismatch,
            "attack '" + attack.id + "' changed the batch shape");
    return out;
}

double ReportRow::fooling_rate() const {
    require(n_images > 0, ErrorCode::InvalidArgument, "report row with zero images");
    return static_cast<double>(fooled) / static_cast<double>(n_images);
}

const ReportRow& FoolingReport::at(std::string_view attack, std::string_view model) const {
    for (const auto& r : rows) {
        if (r.attack == attack && r.model == model) {
            return r;
        }
    }
    fail(ErrorCode::InvalidArgument, "no report row for (" + std::string(attack) + ", " + std::string(model) + ")");
}

std::string FoolingReport::to_csv() const {
    std::string out(kCsvHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += r.attack + ',' + r.model + ',' + r.defense + ',' + shortest(r.epsilon) + ',' +
               shortest(r.fooling_rate()) + ',' + std::to_string(r.n_images) + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

std::string FoolingReport::to_json() const {
    nlohmann::ordered_json j;
    j["metadata"] = metadata;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"attack", r.attack},
                             {"model", r.model},
                             {"defense", r.defense},
                             {"epsilon", r.epsilon},
                             {"fooling_rate", r.fooling_rate()},
                             {"fooled", r.fooled},
                             {"n_images", r.n_images},
                             {"seed", r.seed}});
    }
    return j.dump(2) + "\n";
}

void FoolingReport::append(const FoolingReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    for (const auto& [k, v] : other.metadata) {
        metadata.emplace(k, v);
    }
}

FoolingReport score_attack(const AttackSpec& attack, const Tensor& clean, const Tensor& adv,
                           std::span<const NamedModel> models, const DefenseSpec& defense, std::uint64_t seed) {
    require(!models.empty(), ErrorCode::InvalidArgument, "no models to evaluate");
    defense.validate();
    for (const auto& wb : attack.white_box) {
        require(std::any_of(models.begin(), models.end(), [&](const NamedModel& m) { return m.id == wb; }),
                ErrorCode::InvalidArgument, "attack '" + attack.id + "' targets unknown model '" + wb + "'");
    }
    FoolingReport report;
    report.metadata["interpolation"] = "bilinear-half-pixel";
    report.metadata["defense"] = defense.id();
    ReportRow mean{attack.id, std::string(kBlackBoxMean), defense.id(), attack.epsilon, 0, 0, seed};
    for (const auto& m : models) {
        const FoolingCount c = count_fooled(*m.model, clean, adv, defense, attack.epsilon);
        report.rows.push_back({attack.id, m.id, defense.id(), attack.epsilon, c.fooled, c.total, seed});
        const bool white = std::find(attack.white_box.begin(), attack.white_box.end(), m.id) != attack.white_box.end();
        if (!white) {
            mean.fooled += c.fooled;
            mean.n_images += c.total;
        }
    }
    if (mean.n_images > 0) {
        report.rows.push_back(mean);
    }
    return report;
}

FoolingReport transfer_matrix(std::span<const AttackSpec> attacks, std::span<const NamedModel> models,
                              const Tensor& images, const DefenseSpec& defense, std::uint64_t seed) {
    require(!attacks.empty() && !models.empty(), ErrorCode::InvalidArgument,
            "transfer matrix needs at least one attack and one model");
    FoolingReport report;
    for (const auto& attack : attacks) {
        report.append(score_attack(attack, images, run_attack(attack, images), models, defense, seed));
    }
    return report;
}

FoolingReport epsilon_sweep(const std::function<AttackSpec(float)>& factory, std::span<const NamedModel> models,
                            const Tensor& images, std::span<const float> eps_list, const DefenseSpec& defense,
                            std::uint64_t seed) {
    require(!eps_list.empty(), ErrorCode::InvalidArgument, "empty epsilon list");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        require(eps_list[i] > 0.0f, ErrorCode::InvalidArgument, "epsilon must be > 0, got " + shortest(eps_list[i]));
        require(i == 0 || eps_list[i] > eps_list[i - 1], ErrorCode::InvalidArgument,
                "epsilon list must be strictly ascending");
    }
    FoolingReport report;
    for (float eps : eps_list) {
        const AttackSpec attack = factory(eps);
        report.append(transfer_matrix(std::span<const AttackSpec>(&attack, 1), models, images, defense, seed));
    }
    return report;
}

}  // namespace atnlab
