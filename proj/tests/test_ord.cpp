#include <gtest/gtest.h>

#include "snord/ord.hpp"
#include "support.hpp"

using namespace snord;
using snord::testing::tiny_arch;
using snord::testing::tiny_dataset;

namespace {

struct OrdSetup {
    Dataset data = tiny_dataset(16, 4, 9);
    SSLSplit split = make_ssl_split(data.size(), 4, data.labels(), 0.25, 9);
    SSLTrainerConfig gcfg;
    RobustTrainConfig rcfg;

    OrdSetup() {
        gcfg.batch_size = 4;
        gcfg.mu = 2;
        gcfg.steps_per_epoch = 1;
        gcfg.total_epochs = 12;
        gcfg.seed = 1;
        rcfg.total_epochs = 6;
        rcfg.batch_size = 32;
        rcfg.train_attack = AttackSpec::training(0.05, 0.02, 1);
        rcfg.eval_attack = AttackSpec{0.05, 0.02, 1, 1, AttackObjective::ce_to_target, true};
        rcfg.val_limit = 4;
        rcfg.seed = 2;
    }
    Classifier<float> model(std::uint64_t seed) const {
        Classifier<float> m(data.shape(), 4, tiny_arch(4));
        m.init(seed);
        return m;
    }
    GeneratorTrainer<float> generator() const { return GeneratorTrainer<float>(data, split, gcfg, model(3)); }
    RobustTrainer<float> robust() const { return RobustTrainer<float>(data, split, NARConfig{}, rcfg, model(4)); }
};

std::vector<int> refresh_epochs(const OrdState& s) {
    std::vector<int> out;
    for (const auto& r : s.refreshes) out.push_back(r.generator_epoch);
    return out;
}

}  // namespace

TEST(OrdTick, PeriodFiveKeepsSnapshotBetweenRefreshes) {
    OrdSetup s;
    auto gen = s.generator();
    auto state = start_ord(gen, s.data);
    const auto first = state.current;
    EXPECT_EQ(first->id(), 0u);
    const ORDSchedule sched{5, 1, true};
    for (int e = 1; e <= 4; ++e) {
        gen.train_epoch();
        EXPECT_EQ(ord_tick(state, sched, gen, s.data), first) << "epoch " << e;
    }
    gen.train_epoch();
    const auto second = ord_tick(state, sched, gen, s.data);
    EXPECT_NE(second, first);
    EXPECT_EQ(second->id(), 1u);
    for (int e = 6; e <= 10; ++e) {
        gen.train_epoch();
        ord_tick(state, sched, gen, s.data);
    }
    EXPECT_EQ(refresh_epochs(state), (std::vector<int>{5, 10}));
    EXPECT_EQ(state.current->id(), 2u);
}

TEST(OrdTick, PeriodOneRefreshesEveryEpoch) {
    OrdSetup s;
    auto gen = s.generator();
    auto state = start_ord(gen, s.data);
    for (int e = 1; e <= 4; ++e) {
        gen.train_epoch();
        EXPECT_EQ(ord_tick(state, ORDSchedule{1, 1, true}, gen, s.data)->id(), static_cast<std::uint64_t>(e));
    }
    EXPECT_EQ(refresh_epochs(state), (std::vector<int>{1, 2, 3, 4}));
}

TEST(OrdTick, DisabledNeverRefreshes) {
    OrdSetup s;
    auto gen = s.generator();
    auto state = start_ord(gen, s.data);
    const auto first = state.current;
    for (int e = 0; e < 7; ++e) {
        gen.train_epoch();
        EXPECT_EQ(ord_tick(state, ORDSchedule{1, 1, false}, gen, s.data), first);
    }
    EXPECT_TRUE(state.refreshes.empty());
}

TEST(OrdTick, InitialSnapshotIsCleanSoftmax) {
    OrdSetup s;
    const auto gen = s.generator();
    const auto state = start_ord(gen, s.data);
    for (auto i : s.split.pool())
        EXPECT_EQ(state.current->at(i),
                  softmax(gen.model().forward(to_scalar<float>(s.data.image(i)), ForwardOptions{Mode::eval, 0})));
}

TEST(OrdTick, InvalidScheduleRejected) {
    EXPECT_THROW((ORDSchedule{0, 1, true}.validate()), Error);
    EXPECT_THROW((ORDSchedule{5, 0, true}.validate()), Error);
}

// ---------------------------------------------------------------------------

TEST(Interleave, RobustEpochsSeeSnapshotsInOrder) {
    OrdSetup s;
    auto gen = s.generator();
    auto rob = s.robust();
    auto state = start_ord(gen, s.data);
    const auto rec = interleave(gen, rob, ORDSchedule{2, 1, true}, 6, state, s.data);
    EXPECT_TRUE(rec.completed);
    ASSERT_EQ(rec.robust.size(), 6u);
    EXPECT_EQ(rec.generator.size(), 6u);
    EXPECT_EQ(gen.epoch(), 6);
    for (std::size_t k = 0; k < rec.robust.size(); ++k) EXPECT_EQ(rec.robust[k].snapshot_id, k / 2);
    EXPECT_EQ(refresh_epochs(state), (std::vector<int>{2, 4, 6}));
}

TEST(Interleave, DisabledMatchesStaticRun) {
    OrdSetup s;
    auto gen = s.generator();
    auto rob = s.robust();
    auto state = start_ord(gen, s.data);
    const auto rec = interleave(gen, rob, ORDSchedule{2, 1, false}, 6, state, s.data);
    EXPECT_TRUE(rec.generator.empty());
    EXPECT_EQ(gen.epoch(), 0);
    const auto stat = train_robust<float>(s.data, s.split, state.current, NARConfig{}, s.rcfg, s.model(4));
    EXPECT_EQ(rob.model().parameter_hash(), stat.final_model.parameter_hash());
    EXPECT_EQ(rob.best_epoch(), stat.best_epoch);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(to_json(rec.robust[k]), to_json(stat.history[k]));
}

TEST(Interleave, StopsEarlyAndResumes) {
    OrdSetup s;
    auto gen_a = s.generator();
    auto rob_a = s.robust();
    auto state_a = start_ord(gen_a, s.data);
    interleave(gen_a, rob_a, ORDSchedule{2, 1, true}, 4, state_a, s.data);

    auto gen_b = s.generator();
    auto rob_b = s.robust();
    auto state_b = start_ord(gen_b, s.data);
    int calls = 0;
    const auto part = interleave(gen_b, rob_b, ORDSchedule{2, 1, true}, 4, state_b, s.data,
                                 [&](const RobustEpochMetrics&) { return ++calls < 2; });
    EXPECT_FALSE(part.completed);
    EXPECT_EQ(rob_b.epoch(), 2);
    const auto rest = interleave(gen_b, rob_b, ORDSchedule{2, 1, true}, 4, state_b, s.data);
    EXPECT_TRUE(rest.completed);
    EXPECT_EQ(rob_b.model().parameter_hash(), rob_a.model().parameter_hash());
    EXPECT_EQ(gen_b.model().parameter_hash(), gen_a.model().parameter_hash());
}

TEST(Interleave, Errors) {
    OrdSetup s;
    auto gen = s.generator();
    auto rob = s.robust();
    OrdState empty;
    try {
        interleave(gen, rob, ORDSchedule{}, 2, empty, s.data);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::missing_dependency);
    }
    // Generator budget of 12 epochs cannot cover 6 robust epochs at 3 each.
    auto state = start_ord(gen, s.data);
    EXPECT_THROW(interleave(gen, rob, ORDSchedule{5, 3, true}, 6, state, s.data), Error);
}
