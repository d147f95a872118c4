#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "snord/attacks.hpp"
#include "snord/common.hpp"
#include "snord/data.hpp"
#include "snord/model.hpp"
#include "snord/nar.hpp"
#include "snord/ssl_generator.hpp"

namespace snord {

enum class RobustObjective {
    snord,       // CE(f(x), ŷ) + β·KL(f(x) ‖ f(x'))
    hard_label,  // CE(f(x_adv), one-hot) with argmax pseudo labels; RST baseline arm
};

struct RobustTrainConfig {
    double beta = 6.0;
    AttackSpec train_attack = AttackSpec::training();
    AttackSpec eval_attack = AttackSpec::pgd20();
    int total_epochs = 20;
    int batch_size = 128;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = false;
    /// Fractions of total_epochs at which the learning rate is multiplied by lr_decay.
    std::vector<double> lr_milestones{0.5, 0.75};
    double lr_decay = 0.1;
    /// Apply the CE term to x' instead of x (deviation arm, off by default).
    bool ce_on_adversarial = false;
    /// Rectify targets with NAR; otherwise y_GT / one-hot argmax p.
    bool use_nar = true;
    RobustObjective objective = RobustObjective::snord;
    /// Validate on at most this many validation examples (0 = all).
    std::size_t val_limit = 0;
    std::uint64_t seed = 0;
    AugmentationPolicy weak = AugmentationPolicy::weak(3);

    void validate() const {
        require(beta >= 0.0, "robust: beta must be >= 0");
        train_attack.validate();
        eval_attack.validate();
        require(total_epochs >= 0 && batch_size >= 1, "robust: bad epoch/batch settings");
        require(lr > 0.0, "robust: lr must be > 0");
    }
};

/// Learning rate for a 0-based epoch: base · decay^(#milestones passed).
inline double piecewise_lr(double base, int epoch, int total_epochs, std::span<const double> milestones, double decay) {
    double lr = base;
    for (double m : milestones)
        if (epoch >= static_cast<int>(std::floor(m * total_epochs))) lr *= decay;
    return lr;
}

template <class T>
struct RobustBatchItem {
    std::vector<T> x;
    LabelDistribution target;
    std::size_t index = 0;
};

struct SnordLoss {
    double total = 0.0;
    double ce = 0.0;
    double kl = 0.0;
    double max_linf = 0.0;
};

namespace detail {

template <class T>
void check_adversarial(std::span<const T> x, std::span<const T> x_adv, double eps) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x_adv[i] >= T(0) && x_adv[i] <= T(1)) || std::abs(static_cast<double>(x_adv[i] - x[i])) > eps + 1e-6)
            fail(ErrorKind::divergence, "adversarial example violates the L-inf bound");
    }
}

template <class T>
void add_scaled(std::vector<T>& dz, const std::vector<double>& g, double scale) {
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += static_cast<T>(g[i] * scale);
}

}  // namespace detail

/// Batch mean of CE(softmax(f(x)), ŷ) + β·KL(softmax(f(x)) ‖ softmax(f(x'))),
/// with x' from kl_pgd. Accumulates the parameter gradient into `grad` when
/// non-empty. `attack_key` seeds the per-example random starts.
template <class T>
SnordLoss snord_loss(const Classifier<T>& model, std::span<const RobustBatchItem<T>> batch,
                     const RobustTrainConfig& cfg, std::uint64_t attack_key, std::span<T> grad) {
    require(!batch.empty(), "snord_loss: empty batch");
    SnordLoss out;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    typename Classifier<T>::Tape clean_tape, adv_tape;
    std::vector<T> dz_clean(static_cast<std::size_t>(model.num_classes()));
    std::vector<T> dz_adv(dz_clean.size());
    double ce_sum = 0.0, kl_sum = 0.0;
    for (const auto& item : batch) {
        const auto attack =
            kl_pgd(model, std::span<const T>(item.x), cfg.train_attack, derive_seed(cfg.seed, {attack_key, item.index}));
        detail::check_adversarial<T>(item.x, attack.x_adv, cfg.train_attack.epsilon);
        out.max_linf = std::max(out.max_linf, static_cast<double>(linf_distance<T>(item.x, attack.x_adv)));

        const ForwardOptions fwd{Mode::train, derive_seed(cfg.seed, {attack_key, item.index, 7})};
        const auto p = softmax(model.forward(item.x, clean_tape, fwd));
        const auto q = softmax(model.forward(attack.x_adv, adv_tape, fwd));
        const auto& ce_pred = cfg.ce_on_adversarial ? q : p;
        const double ce = cross_entropy(ce_pred, item.target);
        const double kl = kl_divergence(p, q);
        ce_sum += ce;
        kl_sum += kl;
        if (!grad.empty()) {
            std::fill(dz_clean.begin(), dz_clean.end(), T(0));
            std::fill(dz_adv.begin(), dz_adv.end(), T(0));
            detail::add_scaled(cfg.ce_on_adversarial ? dz_adv : dz_clean, cross_entropy_logit_grad(ce_pred, item.target),
                               inv_b);
            if (cfg.beta != 0.0) {
                detail::add_scaled(dz_clean, kl_first_arg_logit_grad(p, q), cfg.beta * inv_b);
                detail::add_scaled(dz_adv, kl_second_arg_logit_grad(p, q), cfg.beta * inv_b);
            }
            model.backward(clean_tape, dz_clean, {}, grad);
            model.backward(adv_tape, dz_adv, {}, grad);
        }
    }
    out.ce = ce_sum * inv_b;
    out.kl = kl_sum * inv_b;
    out.total = out.ce + cfg.beta * out.kl;
    if (!std::isfinite(out.total)) fail(ErrorKind::divergence, "snord_loss: non-finite loss");
    return out;
}

/// RST baseline: mean CE(softmax(f(x_adv)), one-hot target) with x_adv from CE-PGD.
template <class T>
SnordLoss baseline_hard_label_step(const Classifier<T>& model, std::span<const RobustBatchItem<T>> batch,
                                   const RobustTrainConfig& cfg, std::uint64_t attack_key, std::span<T> grad) {
    require(!batch.empty(), "baseline_hard_label_step: empty batch");
    SnordLoss out;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    typename Classifier<T>::Tape tape;
    std::vector<T> dz(static_cast<std::size_t>(model.num_classes()));
    double ce_sum = 0.0;
    auto spec = cfg.train_attack;
    spec.objective = AttackObjective::ce_to_target;
    for (const auto& item : batch) {
        const auto attack = pgd(model, std::span<const T>(item.x), spec, item.target,
                                derive_seed(cfg.seed, {attack_key, item.index}));
        detail::check_adversarial<T>(item.x, attack.x_adv, spec.epsilon);
        out.max_linf = std::max(out.max_linf, static_cast<double>(linf_distance<T>(item.x, attack.x_adv)));
        const auto q = softmax(
            model.forward(attack.x_adv, tape, {Mode::train, derive_seed(cfg.seed, {attack_key, item.index, 7})}));
        ce_sum += cross_entropy(q, item.target);
        if (!grad.empty()) {
            std::fill(dz.begin(), dz.end(), T(0));
            detail::add_scaled(dz, cross_entropy_logit_grad(q, item.target), inv_b);
            model.backward(tape, dz, {}, grad);
        }
    }
    out.ce = ce_sum * inv_b;
    out.total = out.ce;
    if (!std::isfinite(out.total)) fail(ErrorKind::divergence, "baseline_hard_label_step: non-finite loss");
    return out;
}

struct RobustEpochMetrics {
    int epoch = 0;
    double train_ce = 0.0;
    double train_kl = 0.0;
    double train_loss = 0.0;
    double sa_val = 0.0;
    double ra_val = 0.0;
    std::uint64_t snapshot_id = 0;
    double lr = 0.0;
    double max_linf = 0.0;
    /// Snapshot ids read by the epoch's steps; a single id per step by construction.
    std::vector<std::uint64_t> snapshot_ids_per_step;
};

inline nlohmann::json to_json(const RobustEpochMetrics& m) {
    return {{"epoch", m.epoch},       {"train_ce", m.train_ce}, {"train_kl", m.train_kl}, {"train_loss", m.train_loss},
            {"sa_val", m.sa_val},     {"ra_val", m.ra_val},     {"snapshot_id", m.snapshot_id}, {"lr", m.lr},
            {"max_linf", m.max_linf}};
}

inline RobustEpochMetrics robust_metrics_from_json(const nlohmann::json& j) {
    RobustEpochMetrics m;
    m.epoch = j.at("epoch").template get<int>();
    m.train_ce = j.at("train_ce").template get<double>();
    m.train_kl = j.at("train_kl").template get<double>();
    m.train_loss = j.at("train_loss").template get<double>();
    m.sa_val = j.at("sa_val").template get<double>();
    m.ra_val = j.at("ra_val").template get<double>();
    m.snapshot_id = j.at("snapshot_id").template get<std::uint64_t>();
    m.lr = j.at("lr").template get<double>();
    m.max_linf = j.at("max_linf").template get<double>();
    return m;
}

/// Adversarial training of the robust model on the full pool with
/// snapshot-derived targets. Keeps the epoch with the highest validation RA
/// (earliest on ties).
template <class T>
class RobustTrainer {
public:
    /// `val_data` defaults to `data` with split.val as the validation indices.
    RobustTrainer(const Dataset& data, SSLSplit split, NARConfig nar, RobustTrainConfig cfg, Classifier<T> model,
                  const Dataset* val_data = nullptr)
        : data_(&data), split_(std::move(split)), nar_(nar), cfg_(std::move(cfg)), model_(std::move(model)) {
        nar_.validate();
        cfg_.validate();
        pool_ = split_.pool();
        require(!pool_.empty(), "robust: empty training pool");
        is_labeled_.assign(data.size(), 0);
        for (auto i : split_.labeled) is_labeled_.at(i) = 1;
        if (val_data) {
            val_data_ = val_data;
            val_idx_.resize(val_data->size());
            std::iota(val_idx_.begin(), val_idx_.end(), std::size_t{0});
        } else {
            val_data_ = &data;
            val_idx_ = split_.val;
        }
        if (cfg_.val_limit > 0 && val_idx_.size() > cfg_.val_limit) val_idx_.resize(cfg_.val_limit);
        best_model_ = model_;
    }

    void set_snapshot(SnapshotPtr s) {
        require(s != nullptr, "robust: null snapshot");
        for (auto i : pool_) require(s->contains(i), "robust: snapshot does not cover the training pool");
        snapshot_ = std::move(s);
    }
    const SnapshotPtr& snapshot() const noexcept { return snapshot_; }

    const Classifier<T>& model() const noexcept { return model_; }
    const Classifier<T>& best_model() const noexcept { return best_model_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best_ra() const noexcept { return best_ra_; }
    int epoch() const noexcept { return epoch_; }
    const std::vector<RobustEpochMetrics>& history() const noexcept { return history_; }
    const RobustTrainConfig& config() const noexcept { return cfg_; }
    const NARConfig& nar() const noexcept { return nar_; }

    /// Training target for one pool example under the current snapshot.
    LabelDistribution target_for(std::size_t index, int epoch) const {
        const auto p = snapshot_->at(index);
        const bool hard = cfg_.objective == RobustObjective::hard_label || !cfg_.use_nar;
        if (is_labeled_[index]) {
            const int y = data_->label(index);
            return hard ? hard_target(p, y).y_hat : rectify_labeled(p, y, nar_.lambda).y_hat;
        }
        if (hard) return hard_target(p, std::nullopt).y_hat;
        return rectify(nar_, p, std::nullopt, static_cast<std::uint64_t>(epoch), snapshot_->id(), index).y_hat;
    }

    RobustEpochMetrics train_epoch() {
        if (!snapshot_) fail(ErrorKind::missing_dependency, "robust: no pseudo-label snapshot");
        const SnapshotPtr snap = snapshot_;  // fixed for the whole epoch
        RobustEpochMetrics m;
        m.snapshot_id = snap->id();
        m.lr = piecewise_lr(cfg_.lr, epoch_, cfg_.total_epochs, cfg_.lr_milestones, cfg_.lr_decay);
        const SgdConfig sgd{cfg_.momentum, cfg_.weight_decay, cfg_.nesterov};

        auto order = pool_;
        auto rng = make_rng(cfg_.seed, Stream::robust_batches, {static_cast<std::uint64_t>(epoch_)});
        std::shuffle(order.begin(), order.end(), rng);

        std::vector<T> grad(model_.num_params());
        const auto B = static_cast<std::size_t>(cfg_.batch_size);
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += B, ++steps) {
            const std::size_t end = std::min(order.size(), start + B);
            std::vector<RobustBatchItem<T>> batch;
            batch.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const auto i = order[k];
                const auto xa = augment(data_->image(i), data_->shape(), cfg_.weak, static_cast<std::uint64_t>(epoch_), i);
                batch.push_back({to_scalar<T>(xa), target_for(i, epoch_), i});
            }
            m.snapshot_ids_per_step.push_back(snap->id());
            std::fill(grad.begin(), grad.end(), T(0));
            const std::uint64_t key = static_cast<std::uint64_t>(epoch_) * 1000003ULL + steps;
            const auto loss = cfg_.objective == RobustObjective::snord
                                  ? snord_loss<T>(model_, batch, cfg_, key, grad)
                                  : baseline_hard_label_step<T>(model_, batch, cfg_, key, grad);
            parameter_step<T>(model_, grad, loss.total, m.lr, sgd, opt_);
            m.train_ce += loss.ce;
            m.train_kl += loss.kl;
            m.max_linf = std::max(m.max_linf, loss.max_linf);
        }
        m.train_ce /= static_cast<double>(steps);
        m.train_kl /= static_cast<double>(steps);
        m.train_loss = m.train_ce + (cfg_.objective == RobustObjective::snord ? cfg_.beta * m.train_kl : 0.0);
        m.epoch = ++epoch_;

        if (!val_idx_.empty()) {
            const auto val = evaluate_robust_accuracy(model_, *val_data_, cfg_.eval_attack, cfg_.seed, val_idx_);
            m.sa_val = val.standard_accuracy;
            m.ra_val = val.robust_accuracy;
        }
        if (best_epoch_ == 0 || m.ra_val > best_ra_) {
            best_epoch_ = m.epoch;
            best_ra_ = m.ra_val;
            best_model_ = model_;
        }
        history_.push_back(m);
        return m;
    }

    nlohmann::json state_meta() const {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& h : history_) hist.push_back(to_json(h));
        return {{"epoch", epoch_}, {"best_epoch", best_epoch_}, {"best_ra", best_ra_}, {"history", hist}};
    }
    std::string encode_state() const { return encode_checkpoint(model_, opt_, state_meta()); }
    std::string encode_best() const { return encode_checkpoint(best_model_, SgdState<T>{}, {{"epoch", best_epoch_}}); }

    void restore(const Checkpoint<T>& state, const Checkpoint<T>& best) {
        require(state.model.architecture() == model_.architecture(), "robust restore: architecture mismatch");
        model_ = state.model;
        opt_ = state.optimizer;
        best_model_ = best.model;
        epoch_ = state.meta.at("epoch").template get<int>();
        best_epoch_ = state.meta.at("best_epoch").template get<int>();
        best_ra_ = state.meta.at("best_ra").template get<double>();
        history_.clear();
        for (const auto& h : state.meta.at("history")) history_.push_back(robust_metrics_from_json(h));
    }

private:
    const Dataset* data_;
    const Dataset* val_data_ = nullptr;
    SSLSplit split_;
    NARConfig nar_;
    RobustTrainConfig cfg_;
    Classifier<T> model_;
    Classifier<T> best_model_;
    SgdState<T> opt_;
    SnapshotPtr snapshot_;
    std::vector<std::size_t> pool_;
    std::vector<std::size_t> val_idx_;
    std::vector<char> is_labeled_;
    std::vector<RobustEpochMetrics> history_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    double best_ra_ = -1.0;
};

template <class T>
struct RobustRun {
    Classifier<T> best_model;
    Classifier<T> final_model;
    int best_epoch = 0;
    double best_ra = 0.0;
    std::vector<RobustEpochMetrics> history;
};

/// Two-stage training against a fixed snapshot.
template <class T>
RobustRun<T> train_robust(const Dataset& data, const SSLSplit& split, SnapshotPtr snapshot, const NARConfig& nar,
                          const RobustTrainConfig& cfg, Classifier<T> init, const Dataset* val_data = nullptr) {
    if (!snapshot) fail(ErrorKind::missing_dependency, "train_robust: missing snapshot");
    RobustTrainer<T> trainer(data, split, nar, cfg, std::move(init), val_data);
    trainer.set_snapshot(std::move(snapshot));
    for (int e = 0; e < cfg.total_epochs; ++e) trainer.train_epoch();
    return {trainer.best_model(), trainer.model(), trainer.best_epoch(), trainer.best_ra(), trainer.history()};
}

}  // namespace snord
