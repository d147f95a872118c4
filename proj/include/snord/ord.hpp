#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "snord/common.hpp"
#include "snord/robust_trainer.hpp"
#include "snord/ssl_generator.hpp"

namespace snord {

struct ORDSchedule {
    /// Generator epochs between pseudo-label refreshes (T).
    int refresh_period = 5;
    /// Generator epochs trained after each robust epoch.
    int generator_epochs_per_robust_epoch = 1;
    bool enabled = true;

    void validate() const {
        require(refresh_period >= 1, "ord: refresh period must be >= 1");
        require(generator_epochs_per_robust_epoch >= 1, "ord: generator epochs per robust epoch must be >= 1");
    }
};

struct RefreshEvent {
    /// Generator epoch counted from the start of online distillation.
    int generator_epoch = 0;
    std::uint64_t snapshot_id = 0;
    std::uint64_t content_hash = 0;
};

struct OrdState {
    SnapshotPtr current;
    int generator_epochs = 0;
    int since_refresh = 0;
    std::uint64_t next_id = 1;
    std::vector<RefreshEvent> refreshes;
};

/// Initial state holding snapshot 0: p(x) = softmax(f_std(x)) on clean inputs.
template <class T>
OrdState start_ord(const GeneratorTrainer<T>& generator, const Dataset& data) {
    OrdState s;
    const auto pool = generator.split().pool();
    s.current = std::make_shared<const PseudoLabelSnapshot>(
        snapshot_pseudo_labels(generator.model(), data, pool, AugmentationPolicy::identity(), generator.epoch(), 0));
    return s;
}

/// Called once after every generator epoch. Publishes a fresh snapshot when
/// T generator epochs have passed since the last one; otherwise returns the
/// current snapshot unchanged.
template <class T>
SnapshotPtr ord_tick(OrdState& state, const ORDSchedule& schedule, const GeneratorTrainer<T>& generator,
                     const Dataset& data) {
    schedule.validate();
    ++state.generator_epochs;
    ++state.since_refresh;
    if (schedule.enabled && state.since_refresh >= schedule.refresh_period) {
        const auto pool = generator.split().pool();
        auto next = std::make_shared<const PseudoLabelSnapshot>(snapshot_pseudo_labels(
            generator.model(), data, pool, generator.config().weak, generator.epoch(), state.next_id++));
        state.refreshes.push_back({state.generator_epochs, next->id(), next->content_hash()});
        state.current = std::move(next);
        state.since_refresh = 0;
    }
    return state.current;
}

struct InterleaveRecord {
    std::vector<RobustEpochMetrics> robust;
    std::vector<GeneratorEpochMetrics> generator;
    std::vector<RefreshEvent> refreshes;
    bool completed = false;
};

/// Alternates robust epochs and generator epochs until the robust trainer has
/// run `robust_epochs` epochs. The robust trainer picks up the current
/// snapshot only at epoch boundaries. With ORD disabled the generator is left
/// alone and the snapshot never changes.
///
/// `after_epoch` runs after each robust epoch (and its generator epochs);
/// returning false stops early, leaving a resumable state.
template <class T>
InterleaveRecord interleave(GeneratorTrainer<T>& generator, RobustTrainer<T>& robust, const ORDSchedule& schedule,
                            int robust_epochs, OrdState& state, const Dataset& data,
                            const std::function<bool(const RobustEpochMetrics&)>& after_epoch = {}) {
    schedule.validate();
    if (!state.current) fail(ErrorKind::missing_dependency, "interleave: no initial snapshot");
    InterleaveRecord rec;
    while (robust.epoch() < robust_epochs) {
        robust.set_snapshot(state.current);
        const auto m = robust.train_epoch();
        rec.robust.push_back(m);
        if (schedule.enabled) {
            for (int k = 0; k < schedule.generator_epochs_per_robust_epoch; ++k) {
                if (generator.epoch() >= generator.config().total_epochs)
                    fail(ErrorKind::invalid_argument, "interleave: generator epoch budget exhausted");
                rec.generator.push_back(generator.train_epoch());
                ord_tick(state, schedule, generator, data);
            }
        }
        if (after_epoch && !after_epoch(m)) break;
    }
    rec.refreshes = state.refreshes;
    rec.completed = robust.epoch() >= robust_epochs;
    return rec;
}

}  // namespace snord
