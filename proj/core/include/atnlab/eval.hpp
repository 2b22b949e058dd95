#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atnlab/attacks.hpp"
#include "atnlab/nets.hpp"

namespace atnlab {

enum class DefenseKind { None, ResizeChain, RandomNoise };

/// Preprocessing applied to adversarial images before the evaluated model.
struct DefenseSpec {
    DefenseKind kind = DefenseKind::None;
    std::vector<double> factors = {1.334, 0.666};  // relative to the input side
    float beta = 6.0f;
    std::uint64_t seed = 0;

    static DefenseSpec none() { return {}; }
    static DefenseSpec resize(std::vector<double> factors = {1.334, 0.666});
    static DefenseSpec noise(float beta, std::uint64_t seed = 0);

    /// "none", "resize" or "noise:<beta>".
    std::string id() const;
    void validate() const;
};

/// Accepts none | resize | noise:<beta>.
DefenseSpec parse_defense(std::string_view text, std::uint64_t seed = 0);

/// Bilinear resize with half-pixel centres and edge clamping. Works on
/// [C,H,W] or [B,C,H,W].
Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w);

/// H -> round(f1 H) -> round(f2 H) -> ... -> H. Output shape equals the input
/// shape; an empty chain returns the input unchanged.
Tensor resize_chain(const Tensor& image, std::span<const double> factors);

/// Applies the defense to a batch [B,C,H,W]. Noise for image i comes from a
/// stream forked from (seed, i), so results do not depend on batching.
Tensor apply_defense(const Tensor& images, const DefenseSpec& defense, std::size_t first_index = 0);

struct FoolingCount {
    std::size_t fooled = 0;
    std::size_t total = 0;

    double rate() const;
};

/// Counts images whose defended adversarial prediction differs from the
/// undefended clean prediction. Every adversarial image must lie within
/// `epsilon` of its clean image.
FoolingCount count_fooled(const ClassifierModel& model, const Tensor& clean, const Tensor& adv,
                          const DefenseSpec& defense, float epsilon);
double fooling_rate(const ClassifierModel& model, const Tensor& clean, const Tensor& adv, const DefenseSpec& defense,
                    float epsilon);

struct NamedModel {
    std::string id;
    const ClassifierModel* model = nullptr;
};

/// A batch attack bound to its white-box target(s).
struct AttackSpec {
    std::string id;
    float epsilon = 16.0f;
    std::vector<std::string> white_box;
    std::function<Tensor(const Tensor&)> run;
};

enum class AttackMethod { Fgsm, Pgd, MiFgsm, Atn };
AttackMethod parse_attack_method(std::string_view text);
std::string_view to_string(AttackMethod method);

AttackSpec gradient_attack(AttackMethod method, const NamedModel& target, const AttackConfig& cfg);

/// Smallest trained budget >= requested.
float select_trained_epsilon(std::span<const float> trained, float requested);

/// Generator bank keyed by training budget. A requested budget is served by
/// the smallest trained budget at or above it, then clipped to the request.
struct GeneratorBank {
    std::map<float, const GeneratorModel*> by_epsilon;

    std::vector<float> budgets() const;
    Tensor generate(const Tensor& images, float epsilon) const;
};

AttackSpec atn_attack(std::string id, const GeneratorBank& bank, float epsilon, std::vector<std::string> white_box);

struct ReportRow {
    std::string attack;
    std::string model;
    std::string defense;
    float epsilon = 0.0f;
    std::size_t fooled = 0;
    std::size_t n_images = 0;
    std::uint64_t seed = 0;

    double fooling_rate() const;
};

inline constexpr std::string_view kBlackBoxMean = "black-box-mean";

struct FoolingReport {
    std::vector<ReportRow> rows;
    std::map<std::string, std::string> metadata;

    /// Row for (attack, model); throws when absent.
    const ReportRow& at(std::string_view attack, std::string_view model) const;
    std::string to_csv() const;
    std::string to_json() const;
    void append(const FoolingReport& other);
};

inline constexpr std::string_view kCsvHeader = "attack,model,defense,epsilon,fooling_rate,n_images,seed";

/// Full attack x model grid. After each attack's cells comes a
/// "black-box-mean" row pooling every model that is not one of that attack's
/// white-box targets (omitted when there is none).
FoolingReport transfer_matrix(std::span<const AttackSpec> attacks, std::span<const NamedModel> models,
                              const Tensor& images, const DefenseSpec& defense, std::uint64_t seed = 0);

/// Scores already-generated adversarial images for one attack: one row per
/// model plus the pooled black-box row. `attack.run` is not used.
FoolingReport score_attack(const AttackSpec& attack, const Tensor& clean, const Tensor& adv,
                           std::span<const NamedModel> models, const DefenseSpec& defense, std::uint64_t seed = 0);

/// One transfer matrix per budget, `factory(eps)` building the attack.
FoolingReport epsilon_sweep(const std::function<AttackSpec(float)>& factory, std::span<const NamedModel> models,
                            const Tensor& images, std::span<const float> eps_list, const DefenseSpec& defense,
                            std::uint64_t seed = 0);

/// Runs an attack over a batch in fixed-size chunks.
Tensor run_attack(const AttackSpec& attack, const Tensor& images, std::size_t chunk = 64);

}  // namespace atnlab
