#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "snord/experiments.hpp"
#include "snord/ssl_generator.hpp"
#include "support.hpp"

using namespace snord;
using snord::testing::tiny_arch;
using snord::testing::tiny_dataset;

namespace {

SSLTrainerConfig small_config() {
    SSLTrainerConfig c;
    c.batch_size = 8;
    c.mu = 2;
    c.total_epochs = 4;
    c.steps_per_epoch = 3;
    c.seed = 3;
    c.weak = AugmentationPolicy::weak(4);
    c.strong = AugmentationPolicy::strong(5);
    return c;
}

Classifier<float> tiny_model(int classes, std::uint64_t seed) {
    Classifier<float> m(Shape{1, 6, 6}, classes, tiny_arch(classes));
    m.init(seed);
    return m;
}

std::vector<LabeledExample> labeled_batch(const Dataset& d, std::size_t from, std::size_t n) {
    std::vector<LabeledExample> out;
    for (std::size_t i = from; i < from + n; ++i) out.push_back({d.image(i), d.label(i), i});
    return out;
}

std::vector<UnlabeledExample> unlabeled_batch(const Dataset& d, std::size_t from, std::size_t n) {
    std::vector<UnlabeledExample> out;
    for (std::size_t i = from; i < from + n; ++i) out.push_back({d.image(i), i});
    return out;
}

}  // namespace

TEST(CosineLr, Schedule) {
    EXPECT_DOUBLE_EQ(cosine_lr(0.03, 0, 100), 0.03);
    EXPECT_NEAR(cosine_lr(0.03, 50, 100), 0.03 * std::cos(7 * std::numbers::pi / 32), 1e-15);
    EXPECT_NEAR(cosine_lr(0.03, 100, 100), 0.03 * std::cos(7 * std::numbers::pi / 16), 1e-15);
    for (std::uint64_t k = 1; k <= 100; ++k) EXPECT_LT(cosine_lr(0.03, k, 100), cosine_lr(0.03, k - 1, 100));
    EXPECT_GT(cosine_lr(0.03, 100, 100), 0.0);
}

TEST(CyclicSampler, VisitsEachIndexOncePerCycleAndSeeks) {
    std::vector<std::size_t> idx{3, 5, 8, 13, 21};
    CyclicSampler s(idx, 1, 2);
    auto first = s.next(5);
    std::sort(first.begin(), first.end());
    EXPECT_EQ(first, idx);
    const auto tail = s.next(7);
    CyclicSampler t(idx, 1, 2);
    t.seek(5);
    EXPECT_EQ(t.next(7), tail);
}

TEST(SslStep, UnreachableThresholdMasksEverything) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 1);
    auto cfg = small_config();
    cfg.tau = 1.0;
    const auto lab = labeled_batch(d, 0, 4);
    const auto unl = unlabeled_batch(d, 10, 8);
    const auto r = ssl_step<float>(m, lab, unl, cfg, 0, {});
    EXPECT_EQ(r.mask_rate, 0.0);
    EXPECT_EQ(r.unsupervised, 0.0);
    EXPECT_EQ(r.total, r.supervised);
}

TEST(SslStep, LabeledOnlyBatchIsSupervisedCrossEntropy) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 2);
    auto cfg = small_config();
    cfg.weak = AugmentationPolicy::identity();
    const auto lab = labeled_batch(d, 0, 6);
    const auto r = ssl_step<float>(m, lab, {}, cfg, 0, {});
    double ce = 0.0;
    for (const auto& ex : lab)
        ce += cross_entropy(softmax(m.forward(to_scalar<float>(ex.x), ForwardOptions{Mode::eval, 0})),
                            LabelDistribution::one_hot(4, ex.label));
    EXPECT_NEAR(r.supervised, ce / 6, 1e-12);
    EXPECT_EQ(r.total, r.supervised);
    EXPECT_EQ(r.unsupervised, 0.0);
}

TEST(SslStep, ConfidentIdentityViewsGiveSelfTrainingLoss) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 3);
    auto cfg = small_config();
    cfg.weak = AugmentationPolicy::identity();
    cfg.strong = AugmentationPolicy::identity();
    cfg.tau = 1e-9;
    const auto lab = labeled_batch(d, 0, 2);
    const auto unl = unlabeled_batch(d, 20, 4);
    const auto r = ssl_step<float>(m, lab, unl, cfg, 0, {});
    double own = 0.0;
    for (const auto& ex : unl) {
        const auto p = softmax(m.forward(to_scalar<float>(ex.x), ForwardOptions{Mode::eval, 0}));
        own += cross_entropy(p, LabelDistribution::one_hot(4, argmax(p)));
    }
    EXPECT_EQ(r.mask_rate, 1.0);
    EXPECT_NEAR(r.unsupervised, own / 4, 1e-12);
    EXPECT_NEAR(r.total, r.supervised + r.unsupervised, 1e-12);
}

TEST(SslStep, BatchShapeErrors) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 4);
    const auto cfg = small_config();
    EXPECT_THROW(ssl_step<float>(m, {}, unlabeled_batch(d, 0, 2), cfg, 0, {}), Error);
    EXPECT_THROW(ssl_step<float>(m, labeled_batch(d, 0, 2), unlabeled_batch(d, 0, 3), cfg, 0, {}), Error);
}

TEST(SslStep, ParametersUnchanged) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 5);
    const auto before = m.parameter_hash();
    std::vector<float> grad(m.num_params(), 0.0f);
    ssl_step<float>(m, labeled_batch(d, 0, 2), unlabeled_batch(d, 10, 4), small_config(), 0, grad);
    EXPECT_EQ(m.parameter_hash(), before);
    EXPECT_TRUE(std::any_of(grad.begin(), grad.end(), [](float g) { return g != 0.0f; }));
}

// ---------------------------------------------------------------------------

TEST(GeneratorTrainer, EmptyUnlabeledSetMatchesSupervisedTraining) {
    const auto d = tiny_dataset();
    auto split = make_ssl_split(d.size(), 4, d.labels(), 1.0, 1);
    const auto cfg = small_config();
    GeneratorTrainer<float> gen(d, split, cfg, tiny_model(4, 6));
    SupervisedTrainer<float> sup(d, split.labeled, cfg, tiny_model(4, 6));
    for (int e = 0; e < 3; ++e) {
        const auto gm = gen.train_epoch();
        const auto losses = sup.train_epoch();
        EXPECT_EQ(gen.model().parameter_hash(), sup.model().parameter_hash()) << "epoch " << e;
        EXPECT_EQ(gm.unsupervised_loss, 0.0);
    }
}

TEST(GeneratorTrainer, ResumeIsBitExact) {
    const auto d = tiny_dataset();
    const auto split = make_ssl_split(d.size(), 4, d.labels(), 0.25, 2);
    const auto cfg = small_config();
    GeneratorTrainer<float> straight(d, split, cfg, tiny_model(4, 7));
    for (int e = 0; e < 4; ++e) straight.train_epoch();

    GeneratorTrainer<float> first(d, split, cfg, tiny_model(4, 7));
    first.train_epoch();
    first.train_epoch();
    const auto bytes = first.encode_state();
    GeneratorTrainer<float> resumed(d, split, cfg, tiny_model(4, 99));
    resumed.restore(decode_checkpoint<float>(bytes));
    EXPECT_EQ(resumed.epoch(), 2);
    resumed.train_epoch();
    resumed.train_epoch();
    EXPECT_EQ(resumed.model().parameter_hash(), straight.model().parameter_hash());
    EXPECT_EQ(resumed.encode_state(), straight.encode_state());
}

TEST(GeneratorTrainer, DeterministicAcrossRuns) {
    const auto d = tiny_dataset();
    const auto split = make_ssl_split(d.size(), 4, d.labels(), 0.25, 2);
    GeneratorTrainer<float> a(d, split, small_config(), tiny_model(4, 8));
    GeneratorTrainer<float> b(d, split, small_config(), tiny_model(4, 8));
    const auto ma = a.train_epoch();
    const auto mb = b.train_epoch();
    EXPECT_EQ(a.model().parameter_hash(), b.model().parameter_hash());
    EXPECT_EQ(ma.supervised_loss, mb.supervised_loss);
    EXPECT_EQ(ma.mask_rate, mb.mask_rate);
}

TEST(GeneratorTrainer, StepsPerEpochResolution) {
    SSLTrainerConfig c;
    EXPECT_EQ(c.resolve_steps_per_epoch(450, 44550), 140);  // ceil(44550 / 320)
    EXPECT_EQ(c.resolve_steps_per_epoch(130, 0), 3);
    c.steps_per_epoch = 7;
    EXPECT_EQ(c.resolve_steps_per_epoch(450, 44550), 7);
}

TEST(GeneratorTrainer, InvalidConfigRejected) {
    auto c = small_config();
    c.tau = 0.0;
    EXPECT_THROW(c.validate(), Error);
    c = small_config();
    c.mu = 0;
    EXPECT_THROW(c.validate(), Error);
}

// ---------------------------------------------------------------------------

TEST(Snapshot, IdentityPolicyEqualsDirectSoftmax) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 9);
    std::vector<std::size_t> pool{0, 4, 9, 33};
    const auto s = snapshot_pseudo_labels(m, d, pool, AugmentationPolicy::identity(), 0, 0);
    for (auto i : pool)
        EXPECT_EQ(s.at(i), softmax(m.forward(to_scalar<float>(d.image(i)), ForwardOptions{Mode::eval, 0})));
    EXPECT_FALSE(s.contains(1));
    EXPECT_THROW(s.at(1), Error);
}

TEST(Snapshot, SameEpochTwiceIsBitIdentical) {
    const auto d = tiny_dataset();
    const auto m = tiny_model(4, 10);
    std::vector<std::size_t> pool(d.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const auto w = AugmentationPolicy::weak(3);
    const auto a = snapshot_pseudo_labels(m, d, pool, w, 5, 1);
    const auto b = snapshot_pseudo_labels(m, d, pool, w, 5, 1);
    EXPECT_EQ(a.content_hash(), b.content_hash());
    EXPECT_EQ(a.encode(), b.encode());
    EXPECT_NE(a.content_hash(), snapshot_pseudo_labels(m, d, pool, w, 6, 1).content_hash());
}

TEST(Snapshot, ConstantGeneratorGivesUniformDistributions) {
    const auto d = tiny_dataset();
    Classifier<float> m(d.shape(), 4, "linear:4");
    std::vector<std::size_t> pool{0, 1, 2};
    const auto s = snapshot_pseudo_labels(m, d, pool, AugmentationPolicy::weak(1), 0, 0);
    for (auto i : pool) EXPECT_EQ(s.at(i), LabelDistribution::uniform(4));
}

TEST(Snapshot, EncodeDecodeRoundTrip) {
    const auto d = tiny_dataset();
    std::vector<std::size_t> pool{2, 7, 11};
    const auto s = snapshot_pseudo_labels(tiny_model(4, 11), d, pool, AugmentationPolicy::identity(), 3, 4);
    const auto back = PseudoLabelSnapshot::decode(s.encode());
    EXPECT_EQ(back.content_hash(), s.content_hash());
    EXPECT_EQ(back.epoch(), 3);
    EXPECT_EQ(back.id(), 4u);

    snord::testing::TempDir dir("snap");
    save_snapshot(s, dir.str() + "/p.bin");
    EXPECT_EQ(load_snapshot(dir.str() + "/p.bin").content_hash(), s.content_hash());
    auto bad = s.encode();
    bad[0] = 'x';
    EXPECT_THROW(PseudoLabelSnapshot::decode(bad), Error);
    EXPECT_THROW(PseudoLabelSnapshot::decode(s.encode() + "z"), Error);
}

TEST(PseudoLabelError, OracleAndUniform) {
    const auto d = tiny_dataset(30, 10, 3);
    std::vector<std::size_t> pool(d.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    EXPECT_EQ(pseudo_label_error_rate(oracle_snapshot(d, pool), d.labels(), pool), 0.0);

    // Uniform rows all resolve to class 0, which is right for exactly 1 in 10.
    std::vector<double> probs(pool.size() * 10, 0.1);
    const PseudoLabelSnapshot uniform(0, 0, 10, pool, probs);
    EXPECT_NEAR(pseudo_label_error_rate(uniform, d.labels(), pool), 0.9, 1e-12);
}

TEST(PseudoLabelError, RandomGeneratorOnShuffledLabels) {
    const auto base = tiny_dataset(100, 5, 4);
    std::vector<int> labels(base.labels().begin(), base.labels().end());
    auto rng = make_rng(4, Stream::label_noise);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<std::size_t> pool(labels.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const auto s = snapshot_pseudo_labels(tiny_model(5, 12), base, pool, AugmentationPolicy::identity(), 0, 0);
    const double n = static_cast<double>(pool.size()), p = 0.8;
    EXPECT_NEAR(pseudo_label_error_rate(s, labels, pool), p, 4 * std::sqrt(p * (1 - p) / n));
}
