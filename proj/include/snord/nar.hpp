#pragma once

#include <cmath>
#include <optional>

#include "snord/common.hpp"
#include "snord/model.hpp"

namespace snord {

/// How the one-hot component of an unlabeled target is chosen.
enum class UnlabeledMode {
    sample,  // draw a class from p(x)
    argmax,  // most likely class; kept only for the sensitivity comparison
};

struct NARConfig {
    /// Weight of the predicted distribution, shared by labeled and unlabeled examples.
    double lambda = 0.5;
    UnlabeledMode unlabeled_mode = UnlabeledMode::sample;
    /// Redraw sampled classes every epoch; otherwise once per snapshot.
    bool resample_per_epoch = true;
    std::uint64_t seed = 0;

    void validate() const { require(lambda >= 0.0 && lambda <= 1.0, "nar: lambda must lie in [0, 1]"); }
};

enum class TargetSource { labeled, unlabeled };

struct RectifiedTarget {
    LabelDistribution y_hat;
    TargetSource source = TargetSource::labeled;
    std::optional<int> sampled_class;
};

namespace detail {

inline LabelDistribution fuse(double lambda, const LabelDistribution& p, int k) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        out[i] = lambda * p[i] + (1.0 - lambda) * (static_cast<int>(i) == k ? 1.0 : 0.0);
    return LabelDistribution(std::move(out));
}

}  // namespace detail

/// ŷ = λ·p + (1−λ)·y_GT.
inline RectifiedTarget rectify_labeled(const LabelDistribution& p, int label, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, "nar: lambda must lie in [0, 1]");
    require(label >= 0 && static_cast<std::size_t>(label) < p.size(), "nar: label out of range");
    return {detail::fuse(lambda, p, label), TargetSource::labeled, std::nullopt};
}

/// Draws class i with probability p_i (inverse CDF on one uniform draw).
inline int sample_class(const LabelDistribution& p, Rng& rng) {
    double total = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        require(std::isfinite(p[i]) && p[i] >= 0.0, "sample_one_hot: invalid probability");
        total += p[i];
        if (p[i] > 0.0) last_positive = static_cast<int>(i);
    }
    if (!(total > 0.0)) fail(ErrorKind::invalid_argument, "sample_one_hot: degenerate distribution");
    const double u = uniform01(rng) * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        cum += p[i];
        if (u < cum) return static_cast<int>(i);
    }
    return last_positive;
}

inline LabelDistribution sample_one_hot(const LabelDistribution& p, Rng& rng) {
    return LabelDistribution::one_hot(static_cast<int>(p.size()), sample_class(p, rng));
}

/// ŷ = λ·p + (1−λ)·y_PL with y_PL drawn from p (sample mode) or argmax p.
inline RectifiedTarget rectify_unlabeled(const LabelDistribution& p, const NARConfig& cfg, Rng& rng) {
    cfg.validate();
    const int k = cfg.unlabeled_mode == UnlabeledMode::sample ? sample_class(p, rng) : argmax(p);
    RectifiedTarget t{detail::fuse(cfg.lambda, p, k), TargetSource::unlabeled, std::nullopt};
    if (cfg.unlabeled_mode == UnlabeledMode::sample) t.sampled_class = k;
    return t;
}

/// Entry point used by the trainers: picks the branch by source and keys the
/// sampling stream by (epoch or snapshot id, example index).
inline RectifiedTarget rectify(const NARConfig& cfg, const LabelDistribution& p, std::optional<int> label,
                               std::uint64_t epoch, std::uint64_t snapshot_id, std::uint64_t index) {
    if (label) return rectify_labeled(p, *label, cfg.lambda);
    auto rng = make_rng(cfg.seed, Stream::nar_sampling,
                        {cfg.resample_per_epoch ? epoch : snapshot_id, cfg.resample_per_epoch ? 0u : 1u, index});
    return rectify_unlabeled(p, cfg, rng);
}

/// Target without rectification: y_GT when labeled, one-hot argmax p otherwise.
inline RectifiedTarget hard_target(const LabelDistribution& p, std::optional<int> label) {
    const int k = label ? *label : argmax(p);
    return {LabelDistribution::one_hot(static_cast<int>(p.size()), k),
            label ? TargetSource::labeled : TargetSource::unlabeled, std::nullopt};
}

}  // namespace snord
