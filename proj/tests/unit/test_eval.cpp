#include <doctest.h>

#include <cmath>

#include "atnlab/budget.hpp"
#include "atnlab/error.hpp"
#include "atnlab/eval.hpp"
#include "helpers.hpp"

using namespace atnlab;

namespace {

const Shape kIn{1, 16, 16};

const ClassifierModel& model_a() {
    static const ClassifierModel m = build_classifier("cnn-a", 4, kIn, 1);
    return m;
}
const ClassifierModel& model_b() {
    static const ClassifierModel m = build_classifier("cnn-b", 4, kIn, 2);
    return m;
}

AttackSpec identity_attack(float eps = 16.0f) {
    return AttackSpec{"identity", eps, {"a"}, [](const Tensor& x) { return x; }};
}

// Flips every image to the opposite pixel extreme where the budget allows:
// deterministic and strong enough to change some predictions.
AttackSpec push_attack(float eps, std::vector<std::string> white_box) {
    return AttackSpec{"push", eps, std::move(white_box), [eps](const Tensor& x) {
                          Tensor out = x;
                          for (auto& v : out.data()) {
                              v += v < 128.0f ? eps : -eps;
                          }
                          project_linf(x.data(), out.data(), eps);
                          return out;
                      }};
}

}  // namespace

TEST_CASE("fooling rate examples") {
    CHECK(FoolingCount{0, 10}.rate() == 0.0);
    CHECK(FoolingCount{10, 10}.rate() == 1.0);
    CHECK(FoolingCount{37, 100}.rate() == doctest::Approx(0.37));
    ReportRow r;
    r.fooled = 37;
    r.n_images = 100;
    CHECK(r.fooling_rate() == doctest::Approx(0.37));

    const Tensor x = testutil::random_image(kIn.prepend(20), 3);
    CHECK(fooling_rate(model_a(), x, x, DefenseSpec::none(), 16.0f) == 0.0);
    Tensor far = x;
    far[0] += 17.0f;
    CHECK_THROWS_AS(count_fooled(model_a(), x, far, DefenseSpec::none(), 16.0f), Error);
}

TEST_CASE("transfer matrix shape and pooled mean") {
    const Tensor x = testutil::random_image(kIn.prepend(30), 4);
    const NamedModel models[] = {{"a", &model_a()}, {"b", &model_b()}};

    SUBCASE("identity attack fools nothing") {
        const AttackSpec attacks[] = {identity_attack()};
        const FoolingReport r = transfer_matrix(attacks, models, x, DefenseSpec::none());
        REQUIRE(r.rows.size() == 3);
        for (const auto& row : r.rows) {
            CHECK(row.fooled == 0);
        }
    }
    SUBCASE("1x1 grid has no mean row") {
        const NamedModel one[] = {{"a", &model_a()}};
        const AttackSpec attacks[] = {identity_attack()};
        const FoolingReport r = transfer_matrix(attacks, one, x, DefenseSpec::none());
        CHECK(r.rows.size() == 1);
    }
    SUBCASE("mean pools only black-box models") {
        const AttackSpec attacks[] = {push_attack(40.0f, {"a"})};
        const FoolingReport r = transfer_matrix(attacks, models, x, DefenseSpec::none());
        const ReportRow& mean = r.at("push", kBlackBoxMean);
        CHECK(mean.fooled == r.at("push", "b").fooled);
        CHECK(mean.n_images == 30);
    }
    SUBCASE("unknown white-box id is an error") {
        const AttackSpec attacks[] = {push_attack(4.0f, {"zzz"})};
        CHECK_THROWS_AS(transfer_matrix(attacks, models, x, DefenseSpec::none()), Error);
    }
    SUBCASE("csv layout and determinism") {
        const AttackSpec attacks[] = {push_attack(8.0f, {"a"})};
        const FoolingReport r1 = transfer_matrix(attacks, models, x, DefenseSpec::noise(6.0f, 3), 3);
        const FoolingReport r2 = transfer_matrix(attacks, models, x, DefenseSpec::noise(6.0f, 3), 3);
        const std::string csv = r1.to_csv();
        CHECK(csv == r2.to_csv());
        CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
        CHECK(csv.find("push,a,noise:6,8,") != std::string::npos);
        CHECK(csv.find('\r') == std::string::npos);
        CHECK(r1.to_json().find("\"rows\"") != std::string::npos);
    }
}

TEST_CASE("noise defense does not touch the clean reference") {
    const Tensor x = testutil::random_image(kIn.prepend(40), 5);
    // Identity attack: any "fooling" would come from noise on the adversarial side only.
    const FoolingCount none = count_fooled(model_a(), x, x, DefenseSpec::none(), 1.0f);
    CHECK(none.fooled == 0);
    const DefenseSpec d = DefenseSpec::noise(6.0f, 9);
    CHECK(count_fooled(model_a(), x, x, d, 1.0f).fooled == count_fooled(model_a(), x, x, d, 1.0f).fooled);
    // per-image noise is independent of batching
    const Tensor whole = apply_defense(x, d);
    const Tensor tail = apply_defense(x.slice_rows(10, 40), d, 10);
    CHECK(whole.slice_rows(10, 40) == tail);
}

TEST_CASE("resize chain") {
    const Tensor x = testutil::random_image(Shape{1, 28, 28}, 6);
    CHECK(resize_chain(x, std::vector<double>{}) == x);
    const double factors[] = {1.334, 0.666};
    CHECK(resize_chain(x, factors).shape() == x.shape());
    CHECK(resize_chain(testutil::random_image(Shape{3, 1, 28, 28}, 7), factors).shape() == Shape{3, 1, 28, 28});

    Tensor flat(Shape{1, 28, 28});
    for (auto& v : flat.data()) v = 77.0f;
    const Tensor rf = resize_chain(flat, factors);
    for (float v : rf.data()) {
        CHECK(v == doctest::Approx(77.0f).epsilon(1e-6));
    }

    Tensor board(Shape{1, 28, 28});
    for (std::int64_t i = 0; i < 28; ++i)
        for (std::int64_t j = 0; j < 28; ++j) board[static_cast<std::size_t>(i * 28 + j)] = ((i + j) % 2) ? 255.0f : 0.0f;
    CHECK_FALSE(resize_chain(board, factors) == board);

    // a 2x2 -> 4x4 bilinear upsample with half-pixel centres
    const Tensor small(Shape{1, 2, 2}, std::vector<float>{0, 4, 8, 12});
    const Tensor up = resize_bilinear(small, 4, 4);
    const std::vector<float> want = {0, 1, 3, 4, 2, 3, 5, 6, 6, 7, 9, 10, 8, 9, 11, 12};
    CHECK(up.values() == want);

    const double tiny[] = {0.01};
    CHECK_THROWS_AS(resize_chain(x, tiny), Error);
}

TEST_CASE("defense parsing") {
    CHECK(parse_defense("none").kind == DefenseKind::None);
    CHECK(parse_defense("resize").kind == DefenseKind::ResizeChain);
    const DefenseSpec n = parse_defense("noise:6", 4);
    CHECK(n.kind == DefenseKind::RandomNoise);
    CHECK(n.beta == 6.0f);
    CHECK(n.seed == 4);
    CHECK(n.id() == "noise:6");
    CHECK(parse_defense("noise:2.5").id() == "noise:2.5");
    CHECK_THROWS_AS(parse_defense("jpeg"), Error);
    CHECK_THROWS_AS(parse_defense("noise:-1"), Error);
}

TEST_CASE("trained budget selection and the generator bank") {
    const float trained[] = {4, 8, 16, 32};
    CHECK(select_trained_epsilon(trained, 6.0f) == 8.0f);
    CHECK(select_trained_epsilon(trained, 8.0f) == 8.0f);
    CHECK(select_trained_epsilon(trained, 20.0f) == 32.0f);
    CHECK(select_trained_epsilon(trained, 0.5f) == 4.0f);
    CHECK_THROWS_AS(select_trained_epsilon(trained, 40.0f), Error);
    CHECK_THROWS_AS(select_trained_epsilon(trained, 0.0f), Error);

    GeneratorModel g8 = build_generator(kIn, 8.0f, 3);
    for (auto& [name, t] : g8.graph.params()) {
        const Tensor r = testutil::random_tensor(t.shape(), 4, -2.0, 2.0);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += r[i];
    }
    GeneratorBank bank;
    bank.by_epsilon[8.0f] = &g8;
    const Tensor x = testutil::random_image(kIn.prepend(5), 8);
    const Tensor adv = bank.generate(x, 6.0f);
    CHECK(within_budget(x.data(), adv.data(), 6.0f));
    CHECK(bank.generate(x, 8.0f) == generate_adversarial(g8, x, 8.0f));
    CHECK_THROWS_AS(bank.generate(x, 9.0f), Error);
}

TEST_CASE("epsilon sweep rejects bad budget lists") {
    const Tensor x = testutil::random_image(kIn.prepend(4), 9);
    const NamedModel models[] = {{"a", &model_a()}};
    auto factory = [](float eps) { return push_attack(eps, {"a"}); };
    const float zero[] = {0.0f, 4.0f};
    CHECK_THROWS_AS(epsilon_sweep(factory, models, x, zero, DefenseSpec::none()), Error);
    const float unsorted[] = {8.0f, 4.0f};
    CHECK_THROWS_AS(epsilon_sweep(factory, models, x, unsorted, DefenseSpec::none()), Error);
    const float ok[] = {4.0f, 8.0f};
    CHECK(epsilon_sweep(factory, models, x, ok, DefenseSpec::none()).rows.size() == 2);
}

TEST_CASE("attack method parsing") {
    CHECK(parse_attack_method("fgsm") == AttackMethod::Fgsm);
    CHECK(parse_attack_method("mifgsm") == AttackMethod::MiFgsm);
    CHECK(parse_attack_method("mi-fgsm") == AttackMethod::MiFgsm);
    CHECK(parse_attack_method("atn") == AttackMethod::Atn);
    CHECK_THROWS_AS(parse_attack_method("cw"), Error);
}
