#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "snord/common.hpp"
#include "snord/data.hpp"
#include "snord/model.hpp"

namespace snord {

struct SSLTrainerConfig {
    double tau = 0.95;
    int mu = 5;
    int batch_size = 64;
    double lr = 0.03;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 1e-3;
    int total_epochs = 20;
    /// 0 resolves to ceil(|D_U| / (mu * B)), or ceil(|D_L| / B) without unlabeled data.
    int steps_per_epoch = 0;
    /// Weight of the unsupervised term, fixed at 1.
    double unsup_weight = 1.0;
    std::uint64_t seed = 0;
    AugmentationPolicy weak = AugmentationPolicy::weak(1);
    AugmentationPolicy strong = AugmentationPolicy::strong(2);

    void validate() const {
        require(tau > 0.0 && tau <= 1.0, "ssl: tau must lie in (0, 1]");
        require(mu >= 1, "ssl: mu must be >= 1");
        require(batch_size >= 1, "ssl: batch size must be >= 1");
        require(total_epochs >= 0, "ssl: total_epochs must be >= 0");
        require(steps_per_epoch >= 0, "ssl: steps_per_epoch must be >= 0");
        require(lr > 0.0, "ssl: lr must be > 0");
    }

    int resolve_steps_per_epoch(std::size_t n_labeled, std::size_t n_unlabeled) const {
        if (steps_per_epoch > 0) return steps_per_epoch;
        const auto per_step_u = static_cast<std::size_t>(mu) * static_cast<std::size_t>(batch_size);
        const std::size_t n = n_unlabeled > 0 ? (n_unlabeled + per_step_u - 1) / per_step_u
                                              : (n_labeled + static_cast<std::size_t>(batch_size) - 1) /
                                                    static_cast<std::size_t>(batch_size);
        return static_cast<int>(std::max<std::size_t>(1, n));
    }
};

/// FixMatch-style cosine decay: lr · cos(7πk / 16K).
inline double cosine_lr(double base, std::uint64_t step, std::uint64_t total_steps) {
    if (total_steps == 0) return base;
    return base * std::cos(7.0 * std::numbers::pi * static_cast<double>(step) / (16.0 * static_cast<double>(total_steps)));
}

/// Endless stream of indices: consecutive seeded permutations of `indices`.
/// The position alone determines the state, so it survives checkpointing.
class CyclicSampler {
public:
    CyclicSampler() = default;
    CyclicSampler(std::vector<std::size_t> indices, std::uint64_t seed, std::uint64_t key)
        : indices_(std::move(indices)), seed_(seed), key_(key) {}

    bool empty() const noexcept { return indices_.empty(); }
    std::uint64_t position() const noexcept { return pos_; }
    void seek(std::uint64_t pos) noexcept { pos_ = pos; }

    std::vector<std::size_t> next(std::size_t count) {
        std::vector<std::size_t> out;
        if (indices_.empty()) return out;
        out.reserve(count);
        const std::uint64_t n = indices_.size();
        for (std::size_t k = 0; k < count; ++k, ++pos_) {
            const std::uint64_t cycle = pos_ / n;
            if (cycle != cached_cycle_) {
                perm_ = indices_;
                auto rng = make_rng(seed_, Stream::generator_batches, {key_, cycle});
                std::shuffle(perm_.begin(), perm_.end(), rng);
                cached_cycle_ = cycle;
            }
            out.push_back(perm_[pos_ % n]);
        }
        return out;
    }

private:
    std::vector<std::size_t> indices_;
    std::vector<std::size_t> perm_;
    std::uint64_t seed_ = 0, key_ = 0, pos_ = 0;
    std::uint64_t cached_cycle_ = ~std::uint64_t{0};
};

struct SslLossComponents {
    double supervised = 0.0;
    double unsupervised = 0.0;
    double mask_rate = 0.0;
    double total = 0.0;
    /// Per unlabeled example: max weak-view confidence reached tau.
    std::vector<bool> mask;
};

/// One FixMatch objective evaluation.
///
/// supervised   = mean CE on weak views of labeled examples vs y_GT
/// unsupervised = Σ mask · CE(strong view, argmax of weak view) / |unlabeled|
///
/// Accumulates the gradient of `total` into `grad` when it is non-empty. No
/// parameters change here.
template <class T>
SslLossComponents ssl_step(const Classifier<T>& generator, std::span<const LabeledExample> labeled,
                           std::span<const UnlabeledExample> unlabeled, const SSLTrainerConfig& cfg,
                           std::uint64_t step, std::span<T> grad) {
    if (labeled.empty()) fail(ErrorKind::invalid_argument, "ssl_step: empty labeled batch");
    require(unlabeled.empty() || unlabeled.size() == static_cast<std::size_t>(cfg.mu) * labeled.size(),
            "ssl_step: unlabeled batch must be mu times the labeled batch");
    const Shape& shape = generator.input_shape();
    const int C = generator.num_classes();
    SslLossComponents out;
    typename Classifier<T>::Tape tape;
    std::vector<T> dz(static_cast<std::size_t>(C));

    const double inv_b = 1.0 / static_cast<double>(labeled.size());
    for (const auto& ex : labeled) {
        const auto xw = augment(ex.x, shape, cfg.weak, step, ex.index);
        const auto logits = generator.forward(to_scalar<T>(xw), tape,
                                              {Mode::train, derive_seed(cfg.seed, {step, ex.index, 0})});
        const auto p = softmax(logits);
        const auto target = LabelDistribution::one_hot(C, ex.label);
        out.supervised += cross_entropy(p, target) * inv_b;
        if (!grad.empty()) {
            const auto g = cross_entropy_logit_grad(p, target);
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = static_cast<T>(g[i] * inv_b);
            generator.backward(tape, dz, {}, grad);
        }
    }

    if (!unlabeled.empty()) {
        const double inv_u = 1.0 / static_cast<double>(unlabeled.size());
        std::size_t passed = 0;
        for (const auto& ex : unlabeled) {
            const auto xw = augment(ex.x, shape, cfg.weak, step, ex.index);
            const auto qw = softmax(generator.forward(to_scalar<T>(xw),
                                                      ForwardOptions{Mode::train, derive_seed(cfg.seed, {step, ex.index, 1})}));
            const int pseudo = argmax(qw);
            const bool keep = qw[static_cast<std::size_t>(pseudo)] >= cfg.tau;
            out.mask.push_back(keep);
            if (!keep) continue;
            ++passed;
            const auto xs = augment(ex.x, shape, cfg.strong, step, ex.index);
            const auto logits = generator.forward(to_scalar<T>(xs), tape,
                                                  {Mode::train, derive_seed(cfg.seed, {step, ex.index, 2})});
            const auto p = softmax(logits);
            const auto target = LabelDistribution::one_hot(C, pseudo);
            out.unsupervised += cross_entropy(p, target) * inv_u;
            if (!grad.empty()) {
                const auto g = cross_entropy_logit_grad(p, target);
                for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = static_cast<T>(g[i] * inv_u * cfg.unsup_weight);
                generator.backward(tape, dz, {}, grad);
            }
        }
        out.mask_rate = static_cast<double>(passed) * inv_u;
    }
    out.total = out.supervised + cfg.unsup_weight * out.unsupervised;
    if (!std::isfinite(out.total)) fail(ErrorKind::divergence, "ssl_step: non-finite loss");
    return out;
}

struct GeneratorEpochMetrics {
    int epoch = 0;
    double supervised_loss = 0.0;
    double unsupervised_loss = 0.0;
    double mask_rate = 0.0;
    double lr = 0.0;
    /// Argmax accuracy on D_U against the hidden true labels (NaN when D_U is empty).
    double pseudo_label_accuracy = 0.0;
};

namespace detail {

template <class T>
double argmax_accuracy(const Classifier<T>& model, const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) return std::nan("");
    std::size_t ok = 0;
    for (auto i : indices)
        ok += argmax(std::span<const T>(model.forward(to_scalar<T>(data.image(i)), ForwardOptions{Mode::eval, 0}))) ==
              data.label(i);
    return static_cast<double>(ok) / static_cast<double>(indices.size());
}

inline constexpr std::uint64_t kLabeledStream = 1;
inline constexpr std::uint64_t kUnlabeledStream = 2;

}  // namespace detail

/// Trains the pseudo-label generator with the FixMatch objective.
template <class T>
class GeneratorTrainer {
public:
    GeneratorTrainer(const Dataset& data, SSLSplit split, SSLTrainerConfig cfg, Classifier<T> model)
        : data_(&data), split_(std::move(split)), cfg_(std::move(cfg)), model_(std::move(model)) {
        cfg_.validate();
        require(!split_.labeled.empty(), "generator: no labeled examples");
        steps_per_epoch_ = cfg_.resolve_steps_per_epoch(split_.labeled.size(), split_.unlabeled.size());
        labeled_ = CyclicSampler(split_.labeled, cfg_.seed, detail::kLabeledStream);
        unlabeled_ = CyclicSampler(split_.unlabeled, cfg_.seed, detail::kUnlabeledStream);
    }

    const Classifier<T>& model() const noexcept { return model_; }
    const SSLTrainerConfig& config() const noexcept { return cfg_; }
    const SSLSplit& split() const noexcept { return split_; }
    int epoch() const noexcept { return epoch_; }
    std::uint64_t step() const noexcept { return step_; }
    int steps_per_epoch() const noexcept { return steps_per_epoch_; }
    std::uint64_t total_steps() const noexcept {
        return static_cast<std::uint64_t>(steps_per_epoch_) * static_cast<std::uint64_t>(cfg_.total_epochs);
    }

    GeneratorEpochMetrics train_epoch() {
        GeneratorEpochMetrics m;
        std::vector<T> grad(model_.num_params());
        const auto B = static_cast<std::size_t>(cfg_.batch_size);
        const SgdConfig sgd{cfg_.momentum, cfg_.weight_decay, cfg_.nesterov};
        for (int s = 0; s < steps_per_epoch_; ++s) {
            std::vector<LabeledExample> lab;
            for (auto i : labeled_.next(B)) lab.push_back({data_->image(i), data_->label(i), i});
            std::vector<UnlabeledExample> unl;
            for (auto i : unlabeled_.next(B * static_cast<std::size_t>(cfg_.mu))) unl.push_back({data_->image(i), i});

            std::fill(grad.begin(), grad.end(), T(0));
            const auto loss = ssl_step<T>(model_, lab, unl, cfg_, step_, grad);
            m.lr = cosine_lr(cfg_.lr, step_, total_steps());
            parameter_step<T>(model_, grad, loss.total, m.lr, sgd, opt_);
            m.supervised_loss += loss.supervised / steps_per_epoch_;
            m.unsupervised_loss += loss.unsupervised / steps_per_epoch_;
            m.mask_rate += loss.mask_rate / steps_per_epoch_;
            ++step_;
        }
        m.epoch = ++epoch_;
        m.pseudo_label_accuracy = detail::argmax_accuracy(model_, *data_, split_.unlabeled);
        return m;
    }

    nlohmann::json state_meta() const {
        return {{"epoch", epoch_},
                {"step", step_},
                {"labeled_pos", labeled_.position()},
                {"unlabeled_pos", unlabeled_.position()},
                {"seed", cfg_.seed}};
    }
    std::string encode_state() const { return encode_checkpoint(model_, opt_, state_meta()); }

    void restore(const Checkpoint<T>& ck) {
        require(ck.model.architecture() == model_.architecture(), "generator restore: architecture mismatch");
        model_ = ck.model;
        opt_ = ck.optimizer;
        epoch_ = ck.meta.at("epoch").template get<int>();
        step_ = ck.meta.at("step").template get<std::uint64_t>();
        labeled_.seek(ck.meta.at("labeled_pos").template get<std::uint64_t>());
        unlabeled_.seek(ck.meta.at("unlabeled_pos").template get<std::uint64_t>());
    }

private:
    const Dataset* data_;
    SSLSplit split_;
    SSLTrainerConfig cfg_;
    Classifier<T> model_;
    SgdState<T> opt_;
    CyclicSampler labeled_, unlabeled_;
    int steps_per_epoch_ = 1;
    int epoch_ = 0;
    std::uint64_t step_ = 0;
};

/// Plain supervised training on D_L with the generator's optimizer, schedule
/// and weak augmentation. Serves as the supervised-generator ablation arm.
template <class T>
class SupervisedTrainer {
public:
    SupervisedTrainer(const Dataset& data, std::vector<std::size_t> labeled, SSLTrainerConfig cfg, Classifier<T> model)
        : data_(&data), cfg_(std::move(cfg)), model_(std::move(model)) {
        cfg_.validate();
        require(!labeled.empty(), "supervised: no labeled examples");
        steps_per_epoch_ = cfg_.resolve_steps_per_epoch(labeled.size(), 0);
        sampler_ = CyclicSampler(std::move(labeled), cfg_.seed, detail::kLabeledStream);
    }

    const Classifier<T>& model() const noexcept { return model_; }
    const SSLTrainerConfig& config() const noexcept { return cfg_; }
    int epoch() const noexcept { return epoch_; }

    /// Mean CE per step of the epoch.
    std::vector<double> train_epoch() {
        std::vector<double> losses;
        std::vector<T> grad(model_.num_params());
        std::vector<T> dz(static_cast<std::size_t>(model_.num_classes()));
        const std::uint64_t total = static_cast<std::uint64_t>(steps_per_epoch_) * static_cast<std::uint64_t>(cfg_.total_epochs);
        const SgdConfig sgd{cfg_.momentum, cfg_.weight_decay, cfg_.nesterov};
        typename Classifier<T>::Tape tape;
        for (int s = 0; s < steps_per_epoch_; ++s) {
            const auto batch = sampler_.next(static_cast<std::size_t>(cfg_.batch_size));
            const double inv_b = 1.0 / static_cast<double>(batch.size());
            std::fill(grad.begin(), grad.end(), T(0));
            double loss = 0.0;
            for (auto i : batch) {
                const auto xw = augment(data_->image(i), model_.input_shape(), cfg_.weak, step_, i);
                const auto logits =
                    model_.forward(to_scalar<T>(xw), tape, {Mode::train, derive_seed(cfg_.seed, {step_, i, 0})});
                const auto p = softmax(logits);
                const auto y = LabelDistribution::one_hot(model_.num_classes(), data_->label(i));
                loss += cross_entropy(p, y) * inv_b;
                const auto g = cross_entropy_logit_grad(p, y);
                for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = static_cast<T>(g[k] * inv_b);
                model_.backward(tape, dz, {}, grad);
            }
            parameter_step<T>(model_, grad, loss, cosine_lr(cfg_.lr, step_, total), sgd, opt_);
            losses.push_back(loss);
            ++step_;
        }
        ++epoch_;
        return losses;
    }

    nlohmann::json state_meta() const {
        return {{"epoch", epoch_}, {"step", step_}, {"labeled_pos", sampler_.position()}, {"seed", cfg_.seed}};
    }
    std::string encode_state() const { return encode_checkpoint(model_, opt_, state_meta()); }

    void restore(const Checkpoint<T>& ck) {
        require(ck.model.architecture() == model_.architecture(), "supervised restore: architecture mismatch");
        model_ = ck.model;
        opt_ = ck.optimizer;
        epoch_ = ck.meta.at("epoch").template get<int>();
        step_ = ck.meta.at("step").template get<std::uint64_t>();
        sampler_.seek(ck.meta.at("labeled_pos").template get<std::uint64_t>());
    }

private:
    const Dataset* data_;
    SSLTrainerConfig cfg_;
    Classifier<T> model_;
    SgdState<T> opt_;
    CyclicSampler sampler_;
    int steps_per_epoch_ = 1;
    int epoch_ = 0;
    std::uint64_t step_ = 0;
};

template <class T>
struct GeneratorRun {
    Classifier<T> model;
    std::vector<GeneratorEpochMetrics> history;
};

template <class T>
GeneratorRun<T> train_generator(const Dataset& data, const SSLSplit& split, const SSLTrainerConfig& cfg,
                                Classifier<T> init) {
    GeneratorTrainer<T> trainer(data, split, cfg, std::move(init));
    GeneratorRun<T> run;
    for (int e = 0; e < cfg.total_epochs; ++e) run.history.push_back(trainer.train_epoch());
    run.model = trainer.model();
    return run;
}

// ---------------------------------------------------------------------------
// Pseudo-label snapshots

/// Immutable p(x) table for a set of example indices.
class PseudoLabelSnapshot {
public:
    PseudoLabelSnapshot() = default;
    PseudoLabelSnapshot(std::uint64_t id, int epoch, int num_classes, std::vector<std::size_t> indices,
                        std::vector<double> probs)
        : id_(id), epoch_(epoch), num_classes_(num_classes), indices_(std::move(indices)), probs_(std::move(probs)) {
        require(probs_.size() == indices_.size() * static_cast<std::size_t>(num_classes_), "snapshot: size mismatch");
        for (std::size_t k = 0; k < indices_.size(); ++k) {
            if (indices_[k] >= position_.size()) position_.resize(indices_[k] + 1, -1);
            require(position_[indices_[k]] < 0, "snapshot: duplicate index");
            position_[indices_[k]] = static_cast<std::int64_t>(k);
        }
    }

    std::uint64_t id() const noexcept { return id_; }
    int epoch() const noexcept { return epoch_; }
    int num_classes() const noexcept { return num_classes_; }
    std::size_t size() const noexcept { return indices_.size(); }
    std::span<const std::size_t> indices() const noexcept { return indices_; }

    bool contains(std::size_t index) const noexcept { return index < position_.size() && position_[index] >= 0; }

    std::span<const double> probs(std::size_t index) const {
        if (!contains(index)) fail(ErrorKind::invalid_argument, "snapshot: index " + std::to_string(index) + " absent");
        const auto k = static_cast<std::size_t>(position_[index]);
        return {probs_.data() + k * static_cast<std::size_t>(num_classes_), static_cast<std::size_t>(num_classes_)};
    }
    LabelDistribution at(std::size_t index) const {
        const auto p = probs(index);
        return LabelDistribution(std::vector<double>(p.begin(), p.end()));
    }

    std::uint64_t content_hash() const {
        Fnv1a h;
        h.update_value(id_);
        h.update_span(std::span<const std::size_t>(indices_));
        h.update_span(std::span<const double>(probs_));
        return h.digest();
    }

    // File format (binary, little-endian), version 1:
    //   "SNORDPLS" u32 version u64 id i32 epoch i32 num_classes u64 count
    //   count records of { u64 index, num_classes f64 probabilities }
    std::string encode() const {
        detail::ByteWriter w;
        w.put_bytes("SNORDPLS");
        w.put(std::uint32_t{1});
        w.put(id_);
        w.put(static_cast<std::int32_t>(epoch_));
        w.put(static_cast<std::int32_t>(num_classes_));
        w.put(static_cast<std::uint64_t>(indices_.size()));
        for (std::size_t k = 0; k < indices_.size(); ++k) {
            w.put(static_cast<std::uint64_t>(indices_[k]));
            w.put_span(std::span<const double>(probs_.data() + k * static_cast<std::size_t>(num_classes_),
                                               static_cast<std::size_t>(num_classes_)));
        }
        return w.bytes();
    }

    static PseudoLabelSnapshot decode(std::string_view bytes) {
        detail::ByteReader r(bytes, "snapshot");
        if (r.get_bytes(8) != "SNORDPLS") fail(ErrorKind::io, "snapshot: bad magic");
        if (r.get<std::uint32_t>() != 1) fail(ErrorKind::io, "snapshot: unsupported version");
        const auto id = r.get<std::uint64_t>();
        const auto epoch = r.get<std::int32_t>();
        const auto C = r.get<std::int32_t>();
        const auto n = r.get<std::uint64_t>();
        std::vector<std::size_t> idx(n);
        std::vector<double> probs;
        probs.reserve(n * static_cast<std::size_t>(C));
        for (std::uint64_t k = 0; k < n; ++k) {
            idx[k] = r.get<std::uint64_t>();
            const auto p = r.get_vector<double>(static_cast<std::size_t>(C));
            probs.insert(probs.end(), p.begin(), p.end());
        }
        if (!r.at_end()) fail(ErrorKind::io, "snapshot: trailing bytes");
        return PseudoLabelSnapshot(id, epoch, C, std::move(idx), std::move(probs));
    }

private:
    std::uint64_t id_ = 0;
    int epoch_ = 0;
    int num_classes_ = 0;
    std::vector<std::size_t> indices_;
    std::vector<double> probs_;
    std::vector<std::int64_t> position_;
};

using SnapshotPtr = std::shared_ptr<const PseudoLabelSnapshot>;

inline void save_snapshot(const PseudoLabelSnapshot& s, const std::string& path) { write_file_bytes(path, s.encode()); }
inline PseudoLabelSnapshot load_snapshot(const std::string& path) {
    return PseudoLabelSnapshot::decode(read_file_bytes(path));
}

/// p^t(x) = softmax(f_std(α(x))) for every pool example, α keyed by (epoch, index).
template <class T>
PseudoLabelSnapshot snapshot_pseudo_labels(const Classifier<T>& generator, const Dataset& data,
                                           std::span<const std::size_t> pool, const AugmentationPolicy& weak,
                                           int epoch, std::uint64_t id) {
    std::vector<std::size_t> idx(pool.begin(), pool.end());
    std::vector<double> probs;
    probs.reserve(idx.size() * static_cast<std::size_t>(generator.num_classes()));
    for (auto i : idx) {
        const auto x = augment(data.image(i), data.shape(), weak, static_cast<std::uint64_t>(epoch), i);
        const auto p = softmax(generator.forward(to_scalar<T>(x), ForwardOptions{Mode::eval, 0}));
        probs.insert(probs.end(), p.probs.begin(), p.probs.end());
    }
    return PseudoLabelSnapshot(id, epoch, generator.num_classes(), std::move(idx), std::move(probs));
}

/// Fraction of `subset` whose argmax pseudo label differs from the true class.
inline double pseudo_label_error_rate(const PseudoLabelSnapshot& snap, std::span<const int> true_labels,
                                      std::span<const std::size_t> subset) {
    require(!subset.empty(), "pseudo_label_error_rate: empty subset");
    std::size_t wrong = 0;
    for (auto i : subset) {
        if (i >= true_labels.size()) fail(ErrorKind::invalid_argument, "pseudo_label_error_rate: index out of range");
        wrong += argmax(snap.probs(i)) != true_labels[i];
    }
    return static_cast<double>(wrong) / static_cast<double>(subset.size());
}

}  // namespace snord
