#include <gtest/gtest.h>

#include <cmath>

#include "snord/attacks.hpp"
#include "support.hpp"

using namespace snord;
using snord::testing::make_model;
using snord::testing::random_input;
using snord::testing::random_model_case;

namespace {

// f(x) = [w0·x, w1·x] on a single pixel.
Classifier<double> scalar_model(double w0, double w1) {
    Classifier<double> m(Shape{1, 1, 1}, 2, "linear:2");
    auto p = m.parameters();
    p[0] = w0;
    p[1] = w1;
    p[2] = p[3] = 0.0;
    return m;
}

// Labels drawn independently of the inputs, balanced over C classes.
Dataset random_label_dataset(int classes, int per_class, std::uint64_t seed) {
    SyntheticSpec s;
    s.num_classes = classes;
    s.examples_per_class = per_class;
    s.shape = {1, 6, 6};
    s.seed = seed;
    auto d = make_synthetic_dataset(s);
    std::vector<int> labels(d.labels().begin(), d.labels().end());
    auto rng = make_rng(seed, Stream::label_noise);
    std::shuffle(labels.begin(), labels.end(), rng);
    return Dataset(d.shape(), classes, std::vector<float>(d.pixels().begin(), d.pixels().end()), std::move(labels));
}

}  // namespace

TEST(Fgsm, ZeroBudgetIsIdentity) {
    auto rng = make_rng(1, Stream::init);
    const auto mc = random_model_case(rng);
    const auto m = make_model<float>(mc, 1);
    const auto x = random_input<float>(mc.shape, rng);
    EXPECT_EQ(fgsm(m, std::span<const float>(x), LabelDistribution::one_hot(mc.classes, 0), 0.0), x);
}

TEST(Fgsm, LinearModelClosedForm) {
    // d CE / dx for class 0 is q1·(w1 − w0), so the step follows sign(w1 − w0).
    const std::vector<double> x{0.5};
    const auto t0 = LabelDistribution::one_hot(2, 0);
    EXPECT_DOUBLE_EQ(fgsm(scalar_model(1.0, 3.0), std::span<const double>(x), t0, 0.1)[0], 0.6);
    EXPECT_DOUBLE_EQ(fgsm(scalar_model(3.0, 1.0), std::span<const double>(x), t0, 0.1)[0], 0.4);
    const auto t1 = LabelDistribution::one_hot(2, 1);
    EXPECT_DOUBLE_EQ(fgsm(scalar_model(1.0, 3.0), std::span<const double>(x), t1, 0.1)[0], 0.4);
}

TEST(Fgsm, SaturatesAtTheBox) {
    Classifier<double> m(Shape{1, 2, 2}, 2, "linear:2");
    auto p = m.parameters();
    std::fill(p.begin(), p.end(), 0.0);
    for (int i = 0; i < 4; ++i) p[4 + i] = 1.0;  // class 1 weights
    const std::vector<double> x(4, 1.0);
    EXPECT_EQ(fgsm(m, std::span<const double>(x), LabelDistribution::one_hot(2, 0), 0.1), x);
}

TEST(Pgd, NoStepsWithoutRandomStartIsIdentity) {
    auto rng = make_rng(2, Stream::init);
    const auto mc = random_model_case(rng);
    const auto m = make_model<float>(mc, 2);
    const auto x = random_input<float>(mc.shape, rng);
    AttackSpec spec{8.0 / 255, 2.0 / 255, 0, 1, AttackObjective::ce_to_target, false};
    EXPECT_EQ(pgd(m, std::span<const float>(x), spec, LabelDistribution::one_hot(mc.classes, 0), 3).x_adv, x);
}

TEST(Pgd, BoundInvariantForTrainingAttack) {
    auto rng = make_rng(3, Stream::init);
    const auto spec = AttackSpec::training();
    for (int n = 0; n < 100; ++n) {
        const auto mc = random_model_case(rng);
        const auto m = make_model<float>(mc, rng());
        const auto x = random_input<float>(mc.shape, rng);
        const auto r = pgd(m, std::span<const float>(x), spec, LabelDistribution::one_hot(mc.classes, 0), rng());
        for (const auto& c : r.candidates) {
            EXPECT_LE(linf_distance<float>(c.x_adv, x), static_cast<float>(spec.epsilon) + 1e-6f);
            for (float v : c.x_adv) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
        }
    }
}

TEST(Pgd, IsDeterministicAndLeavesParametersAlone) {
    auto rng = make_rng(4, Stream::init);
    const auto mc = random_model_case(rng);
    const auto m = make_model<float>(mc, 4);
    const auto before = m.parameter_hash();
    const auto x = random_input<float>(mc.shape, rng);
    const auto spec = AttackSpec::strong(8.0 / 255, 3);
    const auto t = LabelDistribution::one_hot(mc.classes, 1);
    const auto a = pgd(m, std::span<const float>(x), spec, t, 11);
    const auto b = pgd(m, std::span<const float>(x), spec, t, 11);
    EXPECT_EQ(a.x_adv, b.x_adv);
    EXPECT_EQ(a.restart, b.restart);
    EXPECT_EQ(m.parameter_hash(), before);
}

TEST(Pgd, BestRestartHasTheLargestObjective) {
    auto rng = make_rng(5, Stream::init);
    for (int n = 0; n < 20; ++n) {
        const auto mc = random_model_case(rng);
        const auto m = make_model<float>(mc, rng());
        const auto x = random_input<float>(mc.shape, rng);
        const auto r = pgd(m, std::span<const float>(x), AttackSpec::strong(0.1, 4),
                           LabelDistribution::one_hot(mc.classes, 0), rng());
        ASSERT_GE(r.restart, 0);
        for (std::size_t k = 0; k < r.candidates.size(); ++k) {
            EXPECT_LE(r.candidates[k].objective, r.objective);
            if (static_cast<int>(k) < r.restart) { EXPECT_LT(r.candidates[k].objective, r.objective); }
        }
        EXPECT_EQ(r.x_adv, r.candidates[static_cast<std::size_t>(r.restart)].x_adv);
    }
}

TEST(Pgd, ShorterRunsShareTheirRestarts) {
    auto rng = make_rng(6, Stream::init);
    const auto mc = random_model_case(rng);
    const auto m = make_model<float>(mc, 6);
    const auto x = random_input<float>(mc.shape, rng);
    const auto t = LabelDistribution::one_hot(mc.classes, 0);
    const auto two = pgd(m, std::span<const float>(x), AttackSpec::strong(0.05, 2), t, 9);
    const auto five = pgd(m, std::span<const float>(x), AttackSpec::strong(0.05, 5), t, 9);
    for (int k = 0; k < 2; ++k) EXPECT_EQ(two.candidates[k].x_adv, five.candidates[k].x_adv);
    EXPECT_GE(five.objective, two.objective);
}

TEST(Pgd, InvalidSpecRejected) {
    const auto m = scalar_model(1, 2);
    const std::vector<double> x{0.5};
    const auto t = LabelDistribution::one_hot(2, 0);
    EXPECT_THROW(pgd(m, std::span<const double>(x), AttackSpec{-0.1, 0.1, 1, 1}, t, 0), Error);
    EXPECT_THROW(pgd(m, std::span<const double>(x), AttackSpec{0.1, 0.1, 1, 0}, t, 0), Error);
    EXPECT_THROW(pgd(m, std::span<const double>(x), AttackSpec{0.1, 0.0, 1, 1}, t, 0), Error);
}

TEST(KlPgd, ZeroBudgetGivesZeroKl) {
    auto rng = make_rng(7, Stream::init);
    const auto mc = random_model_case(rng);
    const auto m = make_model<float>(mc, 7);
    const auto x = random_input<float>(mc.shape, rng);
    auto spec = AttackSpec::training();
    spec.epsilon = 0.0;
    const auto r = kl_pgd(m, std::span<const float>(x), spec, 1);
    EXPECT_EQ(r.x_adv, x);
    EXPECT_EQ(r.objective, 0.0);
}

TEST(KlPgd, ConstantModelGivesZeroKl) {
    Classifier<float> m(Shape{1, 4, 4}, 3, "linear:3");
    auto p = m.parameters();
    std::fill(p.begin(), p.end(), 0.0f);
    p[p.size() - 1] = 0.7f;
    auto rng = make_rng(8, Stream::init);
    const auto x = random_input<float>(Shape{1, 4, 4}, rng);
    EXPECT_EQ(kl_pgd(m, std::span<const float>(x), AttackSpec::training(), 2).objective, 0.0);
}

// ---------------------------------------------------------------------------

TEST(RobustAccuracy, ZeroBudgetEqualsStandardAccuracy) {
    const auto d = snord::testing::tiny_dataset(25, 4, 1);
    Classifier<float> m(d.shape(), 4, snord::testing::tiny_arch(4));
    m.init(3);
    const auto r = evaluate_robust_accuracy(m, d, AttackSpec::pgd20(0.0), 5);
    EXPECT_EQ(r.robust_accuracy, r.standard_accuracy);
}

TEST(RobustAccuracy, NeverExceedsStandardAccuracy) {
    const auto d = snord::testing::tiny_dataset(25, 4, 2);
    for (std::uint64_t s = 0; s < 5; ++s) {
        Classifier<float> m(d.shape(), 4, snord::testing::tiny_arch(4));
        m.init(s);
        const auto r = evaluate_robust_accuracy(m, d, AttackSpec::pgd20(0.1), s);
        EXPECT_LE(r.robust_accuracy, r.standard_accuracy);
        for (const auto& rec : r.records) EXPECT_TRUE(!rec.robust || rec.clean_correct);
    }
}

TEST(RobustAccuracy, MoreRestartsNeverRaiseRobustAccuracy) {
    const auto d = snord::testing::tiny_dataset(25, 4, 3);
    Classifier<float> m(d.shape(), 4, snord::testing::tiny_arch(4));
    m.init(9);
    const auto one = evaluate_robust_accuracy(m, d, AttackSpec::strong(0.05, 1), 4);
    const auto four = evaluate_robust_accuracy(m, d, AttackSpec::strong(0.05, 4), 4);
    EXPECT_LE(four.robust_accuracy, one.robust_accuracy);
}

TEST(RobustAccuracy, RandomModelScoresChanceWithinBinomialInterval) {
    const int C = 10, per = 100;
    const auto d = random_label_dataset(C, per, 4);
    const double n = C * per, p = 1.0 / C, half = 4.0 * std::sqrt(p * (1 - p) / n);
    Classifier<float> m(d.shape(), C, "conv:4:3:1:1,relu,avgpool:2,linear:10");
    m.init(17);
    const auto r = evaluate_robust_accuracy(m, d, AttackSpec::pgd20(1.0 / 255), 1);
    EXPECT_NEAR(r.standard_accuracy, p, half);
    EXPECT_NEAR(r.robust_accuracy, p, half);
    EXPECT_LE(r.robust_accuracy, r.standard_accuracy);
}

TEST(RobustAccuracy, SingleClassSetIsFullyRobust) {
    SyntheticSpec s;
    s.num_classes = 1;
    s.examples_per_class = 20;
    s.shape = {1, 4, 4};
    const auto d = make_synthetic_dataset(s);
    Classifier<float> m(d.shape(), 1, "linear:1");
    m.init(1);
    const auto r = evaluate_robust_accuracy(m, d, AttackSpec::pgd20(), 1);
    EXPECT_EQ(r.standard_accuracy, 1.0);
    EXPECT_EQ(r.robust_accuracy, 1.0);
}

TEST(RobustAccuracy, SubsetOfIndices) {
    const auto d = snord::testing::tiny_dataset(10, 4, 5);
    Classifier<float> m(d.shape(), 4, snord::testing::tiny_arch(4));
    m.init(2);
    const std::vector<std::size_t> idx{1, 7, 13};
    const auto r = evaluate_robust_accuracy(m, d, AttackSpec::pgd20(), 3, idx);
    ASSERT_EQ(r.records.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r.records[k].index, idx[k]);
}
