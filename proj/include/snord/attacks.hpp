#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "snord/common.hpp"
#include "snord/data.hpp"
#include "snord/model.hpp"

namespace snord {

enum class AttackObjective { ce_to_target, kl_to_reference };

/// L∞ threat model parameters, in input units.
struct AttackSpec {
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int num_steps = 10;
    int num_restarts = 1;
    AttackObjective objective = AttackObjective::ce_to_target;
    bool random_start = true;

    void validate() const {
        require(epsilon >= 0.0 && std::isfinite(epsilon), "attack: epsilon must be >= 0");
        require(num_steps >= 0, "attack: num_steps must be >= 0");
        require(num_steps == 0 || epsilon == 0.0 || step_size > 0.0, "attack: step_size must be > 0 when num_steps > 0");
        require(num_restarts >= 1, "attack: num_restarts must be >= 1");
    }

    /// 10 steps of 2/255 inside an 8/255 ball.
    static AttackSpec training(double eps = 8.0 / 255.0, double step = 2.0 / 255.0, int steps = 10) {
        return AttackSpec{eps, step, steps, 1, AttackObjective::ce_to_target, true};
    }
    /// PGD-20 evaluation attack, step size eps/4.
    static AttackSpec pgd20(double eps = 8.0 / 255.0) {
        return AttackSpec{eps, eps / 4.0, 20, 1, AttackObjective::ce_to_target, true};
    }
    /// Multi-restart PGD reported as "RA-strong".
    static AttackSpec strong(double eps = 8.0 / 255.0, int restarts = 5) {
        return AttackSpec{eps, eps / 4.0, 20, restarts, AttackObjective::ce_to_target, true};
    }
};

template <class T>
struct AttackCandidate {
    std::vector<T> x_adv;
    double objective = 0.0;
    bool aborted = false;
};

template <class T>
struct AttackResult {
    std::vector<T> x_adv;
    double objective = 0.0;
    int restart = -1;  // -1 when every restart aborted and x is returned
    std::vector<AttackCandidate<T>> candidates;
    std::vector<std::string> diagnostics;
};

template <class T>
T linf_distance(std::span<const T> a, std::span<const T> b) {
    T d = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, static_cast<T>(std::abs(a[i] - b[i])));
    return d;
}

namespace detail {

template <class T>
T sign(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <class T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T a) { return std::isfinite(static_cast<double>(a)); });
}

inline LossSpec loss_for(AttackObjective obj, const LabelDistribution& d) {
    return LossSpec{obj == AttackObjective::ce_to_target ? LossKind::ce_to_target : LossKind::kl_to_reference, d};
}

}  // namespace detail

/// Single signed-gradient step of size eps on CE(softmax(f(x)), target).
template <class T>
std::vector<T> fgsm(const Classifier<T>& model, std::span<const T> x, const LabelDistribution& target, double epsilon) {
    require(epsilon >= 0.0, "fgsm: epsilon must be >= 0");
    const auto g = input_gradient(model, x, LossSpec{LossKind::ce_to_target, target});
    if (!detail::all_finite(std::span<const T>(g.grad))) fail(ErrorKind::divergence, "fgsm: non-finite gradient");
    const T e = static_cast<T>(epsilon);
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + e * detail::sign(g.grad[i]), T(0), T(1));
    return out;
}

/// Projected signed-gradient ascent inside the ε-ball ∩ [0,1]^n.
///
/// `reference` is the CE target or the frozen KL reference depending on
/// spec.objective. Restart r draws its random start from (seed, r), so a
/// k-restart run shares its first restarts with any shorter run. The restart
/// with the highest final objective is returned; ties go to the earliest.
template <class T>
AttackResult<T> pgd(const Classifier<T>& model, std::span<const T> x, const AttackSpec& spec,
                    const LabelDistribution& reference, std::uint64_t seed) {
    spec.validate();
    const auto loss = detail::loss_for(spec.objective, reference);
    const T e = static_cast<T>(spec.epsilon);
    const T a = static_cast<T>(spec.step_size);

    AttackResult<T> result;
    for (int r = 0; r < spec.num_restarts; ++r) {
        AttackCandidate<T> cand;
        cand.x_adv.assign(x.begin(), x.end());
        if (spec.random_start && spec.epsilon > 0.0) {
            auto rng = make_rng(seed, Stream::attack_start, {static_cast<std::uint64_t>(r)});
            for (std::size_t i = 0; i < x.size(); ++i) {
                const T d = static_cast<T>((2.0 * uniform01(rng) - 1.0) * spec.epsilon);
                cand.x_adv[i] = std::clamp(x[i] + d, T(0), T(1));
            }
        }
        for (int step = 0; step < spec.num_steps; ++step) {
            const auto g = input_gradient(model, std::span<const T>(cand.x_adv), loss);
            if (!detail::all_finite(std::span<const T>(g.grad))) {
                cand.aborted = true;
                result.diagnostics.push_back("restart " + std::to_string(r) + ": non-finite gradient at step " +
                                             std::to_string(step));
                break;
            }
            for (std::size_t i = 0; i < x.size(); ++i) {
                const T moved = cand.x_adv[i] + a * detail::sign(g.grad[i]);
                cand.x_adv[i] = std::clamp(std::clamp(moved, x[i] - e, x[i] + e), T(0), T(1));
            }
        }
        if (!cand.aborted) {
            cand.objective = evaluate_loss<T>(loss, model.forward(cand.x_adv, ForwardOptions{Mode::eval, 0}));
            if (result.restart < 0 || cand.objective > result.objective) {
                result.objective = cand.objective;
                result.restart = r;
                result.x_adv = cand.x_adv;
            }
        }
        result.candidates.push_back(std::move(cand));
    }
    if (result.restart < 0) {
        result.x_adv.assign(x.begin(), x.end());
        result.objective = evaluate_loss<T>(loss, model.forward(x, ForwardOptions{Mode::eval, 0}));
    }
    return result;
}

/// Maximizes KL(softmax(f(x)) ‖ softmax(f(x'))) with the clean distribution frozen.
template <class T>
AttackResult<T> kl_pgd(const Classifier<T>& model, std::span<const T> x, AttackSpec spec, std::uint64_t seed) {
    spec.objective = AttackObjective::kl_to_reference;
    const auto reference = softmax(model.forward(x, ForwardOptions{Mode::eval, 0}));
    return pgd(model, x, spec, reference, seed);
}

struct RobustRecord {
    std::size_t index = 0;
    int label = 0;
    int clean_prediction = 0;
    int adversarial_prediction = 0;
    bool clean_correct = false;
    bool robust = false;
};

struct RobustEvalResult {
    double standard_accuracy = 0.0;
    double robust_accuracy = 0.0;
    std::vector<RobustRecord> records;
};

/// PGD robust accuracy with true labels as CE targets.
///
/// The clean input is always one of the candidates, and an example counts as
/// robust only if every candidate (clean point and each restart's final
/// iterate) is classified correctly. Hence RA <= SA, and adding restarts can
/// only lower RA.
template <class T>
RobustEvalResult evaluate_robust_accuracy(const Classifier<T>& model, const Dataset& data, const AttackSpec& spec,
                                          std::uint64_t seed, std::span<const std::size_t> indices = {}) {
    require(spec.objective == AttackObjective::ce_to_target, "robust accuracy needs a CE attack");
    std::vector<std::size_t> all;
    if (indices.empty()) {
        all.resize(data.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        indices = all;
    }
    require(!indices.empty(), "evaluate_robust_accuracy: empty dataset");
    RobustEvalResult res;
    std::size_t clean_ok = 0, robust_ok = 0;
    for (auto idx : indices) {
        const auto x = to_scalar<T>(data.image(idx));
        const int y = data.label(idx);
        RobustRecord rec;
        rec.index = idx;
        rec.label = y;
        rec.clean_prediction = argmax(std::span<const T>(model.forward(x, ForwardOptions{Mode::eval, 0})));
        rec.clean_correct = rec.clean_prediction == y;
        rec.adversarial_prediction = rec.clean_prediction;
        rec.robust = rec.clean_correct;
        if (rec.robust) {
            const auto attack = pgd(model, std::span<const T>(x), spec, LabelDistribution::one_hot(data.num_classes(), y),
                                    derive_seed(seed, {static_cast<std::uint64_t>(Stream::eval_attack), idx}));
            for (const auto& c : attack.candidates) {
                const int pred = argmax(std::span<const T>(model.forward(c.x_adv, ForwardOptions{Mode::eval, 0})));
                if (pred != y) {
                    rec.robust = false;
                    rec.adversarial_prediction = pred;
                    break;
                }
            }
        }
        clean_ok += rec.clean_correct;
        robust_ok += rec.robust;
        res.records.push_back(rec);
    }
    res.standard_accuracy = static_cast<double>(clean_ok) / static_cast<double>(indices.size());
    res.robust_accuracy = static_cast<double>(robust_ok) / static_cast<double>(indices.size());
    return res;
}

}  // namespace snord
