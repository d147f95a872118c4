#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snord/config.hpp"
#include "snord/evalreport.hpp"
#include "snord/ord.hpp"
#include "snord/robust_trainer.hpp"
#include "snord/ssl_generator.hpp"

namespace snord {

// ---------------------------------------------------------------------------
// Data

struct PreparedData {
    Dataset train;
    Dataset test;
    /// Official validation set; empty when validation is carved from train.
    std::optional<Dataset> val;
    SSLSplit split;

    const Dataset* val_data() const { return val ? &*val : nullptr; }
};

/// Builds (or loads) train/test data and the SSL split of `c`.
inline PreparedData prepare_data(const RunConfig& c) {
    validate(c);
    if (c.dataset == "synthetic") {
        auto spec = synthetic_spec(c);
        Dataset train = make_synthetic_dataset(spec);
        spec.examples_per_class = c.synth_test_examples_per_class;
        spec.example_offset = static_cast<std::uint64_t>(c.synth_examples_per_class) * 1000003ULL;
        Dataset test = make_synthetic_dataset(spec);
        auto split = make_ssl_split(train.size(), train.num_classes(), train.labels(), c.label_fraction,
                                    derive_seed(c.seed, {100}), SplitOptions{c.val_fraction});
        return {std::move(train), std::move(test), std::nullopt, std::move(split)};
    }
    Dataset train = load_dataset(c.dataset, "train");
    std::optional<Dataset> val;
    if (dataset_has_split(c.dataset, "val")) val = load_dataset(c.dataset, "val");
    if (!dataset_has_split(c.dataset, "test")) fail(ErrorKind::io, "dataset " + c.dataset + " has no test split");
    Dataset test = load_dataset(c.dataset, "test");
    auto split = make_ssl_split(train.size(), train.num_classes(), train.labels(), c.label_fraction,
                                derive_seed(c.seed, {100}), SplitOptions{val ? 0.0 : c.val_fraction});
    return {std::move(train), std::move(test), std::move(val), std::move(split)};
}

/// Dataset restricted to the first `limit` examples (0 keeps everything).
inline Dataset limit_examples(const Dataset& d, int limit) {
    if (limit <= 0 || static_cast<std::size_t>(limit) >= d.size()) return d;
    std::vector<std::size_t> idx(static_cast<std::size_t>(limit));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return d.subset(idx);
}

// ---------------------------------------------------------------------------
// Pseudo-label manipulation

/// One-hot snapshot of the true labels on `pool` (the fully labeled oracle).
inline PseudoLabelSnapshot oracle_snapshot(const Dataset& data, std::span<const std::size_t> pool) {
    const auto C = static_cast<std::size_t>(data.num_classes());
    std::vector<std::size_t> idx(pool.begin(), pool.end());
    std::vector<double> probs(idx.size() * C, 0.0);
    for (std::size_t k = 0; k < idx.size(); ++k) probs[k * C + static_cast<std::size_t>(data.label(idx[k]))] = 1.0;
    return PseudoLabelSnapshot(0, 0, data.num_classes(), std::move(idx), std::move(probs));
}

/// Raises the argmax error rate on `unlabeled` to `target_error`.
///
/// Each correctly labeled unlabeled example is corrupted with probability
/// q = (target - err0) / (1 - err0) by exchanging the probability of its top
/// class with that of another class j, drawn with probability
/// p_j / (1 - p_top): the generator's own confusion among the remaining
/// classes (uniform when p is one-hot). The multiset of probabilities is kept;
/// only which class carries the top mass changes. Labeled examples and
/// already-wrong examples are untouched.
inline PseudoLabelSnapshot corrupt_snapshot(const PseudoLabelSnapshot& snap, std::span<const int> true_labels,
                                            std::span<const std::size_t> unlabeled, double target_error,
                                            std::uint64_t seed) {
    require(target_error >= 0.0 && target_error < 1.0, "corrupt_snapshot: target error must lie in [0, 1)");
    if (unlabeled.empty() || target_error == 0.0 || snap.num_classes() < 2) return snap;
    const double err0 = pseudo_label_error_rate(snap, true_labels, unlabeled);
    if (err0 >= target_error) return snap;
    const double q = (target_error - err0) / (1.0 - err0);
    const auto C = static_cast<std::size_t>(snap.num_classes());
    const auto idx = snap.indices();
    std::vector<double> probs;
    probs.reserve(idx.size() * C);
    for (auto i : idx) {
        const auto p = snap.probs(i);
        probs.insert(probs.end(), p.begin(), p.end());
    }
    std::vector<char> is_unlabeled(true_labels.size(), 0);
    for (auto i : unlabeled) is_unlabeled.at(i) = 1;
    auto rng = make_rng(seed, Stream::label_noise, {snap.id()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto i = idx[k];
        if (!is_unlabeled[i]) continue;
        std::span<double> p(probs.data() + k * C, C);
        const int top = argmax(std::span<const double>(p));
        const bool draw = uniform01(rng) < q;
        const double u = uniform01(rng);
        if (top != true_labels[i] || !draw) continue;
        const auto t = static_cast<std::size_t>(top);
        const double rest = 1.0 - p[t];
        std::size_t swap_with = C;
        if (rest > 0.0) {
            double acc = 0.0;
            for (std::size_t j = 0; j < C && swap_with == C; ++j)
                if (j != t && u * rest < (acc += p[j])) swap_with = j;
        }
        if (swap_with == C) {
            const auto other = std::min(static_cast<std::size_t>(u * static_cast<double>(C - 1)), C - 2);
            swap_with = other >= t ? other + 1 : other;
        }
        std::swap(p[static_cast<std::size_t>(top)], p[swap_with]);
        // An exact tie would keep the original argmax; break it towards the swapped class.
        if (argmax(std::span<const double>(p)) == top) p[swap_with] = std::nextafter(p[swap_with], 2.0);
    }
    return PseudoLabelSnapshot(snap.id(), snap.epoch(), snap.num_classes(), std::vector<std::size_t>(idx.begin(), idx.end()),
                               std::move(probs));
}

// ---------------------------------------------------------------------------
// Arms

enum class GeneratorKind { supervised, fixmatch, oracle };

inline const char* to_string(GeneratorKind g) {
    switch (g) {
    case GeneratorKind::supervised: return "supervised";
    case GeneratorKind::fixmatch: return "fixmatch";
    case GeneratorKind::oracle: return "oracle";
    }
    return "?";
}

/// One configuration of the downstream robust training.
struct ArmSpec {
    std::string name;
    GeneratorKind generator = GeneratorKind::fixmatch;
    bool nar = true;
    bool ord = true;
    RobustObjective objective = RobustObjective::snord;
    std::optional<double> lambda;
    std::optional<UnlabeledMode> mode;
    /// Pseudo-label error rate imposed on the initial snapshot (0 = none).
    double pl_noise = 0.0;

    static ArmSpec make(std::string name, GeneratorKind g, bool nar, bool ord,
                        RobustObjective obj = RobustObjective::snord) {
        ArmSpec a;
        a.name = std::move(name);
        a.generator = g;
        a.nar = nar;
        a.ord = ord;
        a.objective = obj;
        return a;
    }
};

/// Ablation rows (a)-(e): generator, NAR and ORD toggles. Rows without NAR
/// train on hard targets (y_GT or one-hot argmax p) with the same loss.
inline std::vector<ArmSpec> ablation_rows() {
    return {ArmSpec::make("(a) supervised", GeneratorKind::supervised, false, false),
            ArmSpec::make("(b) ssl", GeneratorKind::fixmatch, false, false),
            ArmSpec::make("(c) ssl+nar", GeneratorKind::fixmatch, true, false),
            ArmSpec::make("(d) ssl+ord", GeneratorKind::fixmatch, false, true),
            ArmSpec::make("(e) ssl+nar+ord", GeneratorKind::fixmatch, true, true)};
}

/// Robust self-training with one-hot argmax pseudo labels on adversarial examples.
inline ArmSpec hard_label_arm() {
    return ArmSpec::make("hard-label rst", GeneratorKind::fixmatch, false, false, RobustObjective::hard_label);
}

/// Fully labeled adversarial training with the SNORD loss.
inline ArmSpec oracle_arm() { return ArmSpec::make("oracle", GeneratorKind::oracle, false, false); }

/// Looks an arm up by full name or by key: a-e, "hard", "oracle".
inline ArmSpec find_arm(const std::string& key) {
    auto rows = ablation_rows();
    if (key.size() == 1 && key[0] >= 'a' && key[0] <= 'e') return rows[static_cast<std::size_t>(key[0] - 'a')];
    if (key == "hard") return hard_label_arm();
    rows.push_back(hard_label_arm());
    rows.push_back(oracle_arm());
    for (const auto& r : rows)
        if (r.name == key) return r;
    fail(ErrorKind::config, "config: unknown arm '" + key + "'");
}

/// Generators shared by every arm of one seed.
template <class T>
struct GeneratorStage {
    std::optional<GeneratorTrainer<T>> fixmatch;
    std::optional<Classifier<T>> supervised;
    SnapshotPtr fixmatch_snapshot;
    SnapshotPtr supervised_snapshot;
    SnapshotPtr oracle;
    std::vector<GeneratorEpochMetrics> fixmatch_history;
};

/// Trains the generators `arms` need for gen_epochs epochs and takes snapshot 0
/// of each on clean inputs.
template <class T>
GeneratorStage<T> train_generators(const RunConfig& c, const PreparedData& d, std::span<const ArmSpec> arms) {
    GeneratorStage<T> st;
    const auto gcfg = generator_config(c);
    const auto pool = d.split.pool();
    const int C = d.train.num_classes();
    Classifier<T> init(d.train.shape(), C, generator_architecture(c, C));
    init.init(derive_seed(c.seed, {110}));
    auto needs = [&](GeneratorKind k) {
        return std::any_of(arms.begin(), arms.end(), [&](const ArmSpec& a) { return a.generator == k; });
    };
    if (needs(GeneratorKind::fixmatch)) {
        GeneratorTrainer<T> g(d.train, d.split, gcfg, init);
        for (int e = 0; e < c.gen_epochs; ++e) st.fixmatch_history.push_back(g.train_epoch());
        st.fixmatch_snapshot = std::make_shared<const PseudoLabelSnapshot>(
            snapshot_pseudo_labels(g.model(), d.train, pool, AugmentationPolicy::identity(), g.epoch(), 0));
        st.fixmatch.emplace(std::move(g));
    }
    if (needs(GeneratorKind::supervised)) {
        SupervisedTrainer<T> s(d.train, d.split.labeled, gcfg, init);
        for (int e = 0; e < c.gen_epochs; ++e) s.train_epoch();
        st.supervised_snapshot = std::make_shared<const PseudoLabelSnapshot>(
            snapshot_pseudo_labels(s.model(), d.train, pool, AugmentationPolicy::identity(), s.epoch(), 0));
        st.supervised.emplace(s.model());
    }
    if (needs(GeneratorKind::oracle))
        st.oracle = std::make_shared<const PseudoLabelSnapshot>(oracle_snapshot(d.train, pool));
    return st;
}

struct ArmResult {
    ArmSpec spec;
    std::uint64_t seed = 0;
    EvalReport report;
    double best_val_ra = 0.0;
    int best_epoch = 0;
    /// Argmax error of the initial snapshot on D_U.
    double initial_pl_error = 0.0;
    std::vector<RobustEpochMetrics> history;
    std::vector<GeneratorEpochMetrics> generator_history;
    std::vector<RefreshEvent> refreshes;
};

template <class T>
ArmResult run_arm(const RunConfig& c, const PreparedData& d, const GeneratorStage<T>& st, const ArmSpec& arm) {
    ArmResult out;
    out.spec = arm;
    out.seed = c.seed;

    auto nar = nar_config(c);
    if (arm.lambda) nar.lambda = *arm.lambda;
    if (arm.mode) nar.unlabeled_mode = *arm.mode;
    auto rcfg = robust_config(c);
    rcfg.use_nar = arm.nar;
    rcfg.objective = arm.objective;
    auto schedule = ord_schedule(c);
    schedule.enabled = arm.ord;

    SSLSplit split = d.split;
    SnapshotPtr snap;
    switch (arm.generator) {
    case GeneratorKind::fixmatch: snap = st.fixmatch_snapshot; break;
    case GeneratorKind::supervised: snap = st.supervised_snapshot; break;
    case GeneratorKind::oracle:
        snap = st.oracle;
        split.labeled = split.pool();
        split.unlabeled.clear();
        break;
    }
    if (!snap) fail(ErrorKind::missing_dependency, "arm " + arm.name + ": generator was not trained");
    if (arm.ord && arm.generator != GeneratorKind::fixmatch)
        fail(ErrorKind::config, "arm " + arm.name + ": online distillation needs the fixmatch generator");
    if (arm.pl_noise > 0.0)
        snap = std::make_shared<const PseudoLabelSnapshot>(
            corrupt_snapshot(*snap, d.train.labels(), split.unlabeled, arm.pl_noise, derive_seed(c.seed, {111})));
    if (!split.unlabeled.empty()) out.initial_pl_error = pseudo_label_error_rate(*snap, d.train.labels(), split.unlabeled);

    const int C = d.train.num_classes();
    Classifier<T> model(d.train.shape(), C, robust_architecture(c, C));
    model.init(derive_seed(c.seed, {112}));
    RobustTrainer<T> trainer(d.train, split, nar, rcfg, std::move(model), d.val_data());

    if (arm.ord) {
        GeneratorTrainer<T> gen = *st.fixmatch;
        OrdState state;
        state.current = snap;
        const auto rec = interleave(gen, trainer, schedule, c.rob_epochs, state, d.train);
        out.generator_history = rec.generator;
        out.refreshes = rec.refreshes;
    } else {
        trainer.set_snapshot(snap);
        for (int e = 0; e < c.rob_epochs; ++e) trainer.train_epoch();
    }
    out.history = trainer.history();
    out.best_epoch = trainer.best_epoch();
    out.best_val_ra = trainer.best_ra();

    const Dataset test = limit_examples(d.test, c.eval_limit);
    out.report = evaluate(trainer.best_model(), test, eval_specs(c), arm.name);
    if (!split.unlabeled.empty()) out.report.pseudo_label_error = out.initial_pl_error;
    return out;
}

/// Runs every arm on one seed with a shared split, generator and budget.
template <class T>
std::vector<ArmResult> run_arms(const RunConfig& c, std::span<const ArmSpec> arms) {
    require(!arms.empty(), "run_arms: no arms");
    const auto data = prepare_data(c);
    const auto stage = train_generators<T>(c, data, arms);
    std::vector<ArmResult> out;
    for (const auto& a : arms) out.push_back(run_arm<T>(c, data, stage, a));
    for (const auto& r : out)
        if (r.history.size() != out.front().history.size())
            fail(ErrorKind::invalid_argument, "run_arms: inconsistent budgets across rows");
    const auto oracle = std::find_if(out.begin(), out.end(), [](const ArmResult& r) {
        return r.spec.generator == GeneratorKind::oracle;
    });
    if (oracle != out.end() && oracle->report.ra > 0.0)
        for (auto& r : out) r.report.relative_ra = relative_robustness(r.report, oracle->report);
    return out;
}

/// Mean of each arm's rates over seeds, in arm order.
inline std::vector<EvalReport> mean_reports(std::span<const std::vector<ArmResult>> per_seed) {
    require(!per_seed.empty(), "mean_reports: no results");
    std::vector<EvalReport> out;
    const auto n = static_cast<double>(per_seed.size());
    for (std::size_t a = 0; a < per_seed.front().size(); ++a) {
        EvalReport m;
        m.name = per_seed.front()[a].spec.name;
        bool has_pl = true, has_rel = true;
        double pl = 0.0, rel = 0.0;
        for (const auto& seed_rows : per_seed) {
            require(seed_rows.size() == per_seed.front().size(), "mean_reports: ragged results");
            const auto& r = seed_rows[a].report;
            m.sa += r.sa / n;
            m.ra += r.ra / n;
            m.ra_strong += r.ra_strong / n;
            has_pl = has_pl && r.pseudo_label_error.has_value();
            has_rel = has_rel && r.relative_ra.has_value();
            if (has_pl) pl += *r.pseudo_label_error / n;
            if (has_rel) rel += *r.relative_ra / n;
        }
        if (has_pl) m.pseudo_label_error = pl;
        if (has_rel) m.relative_ra = rel;
        out.push_back(std::move(m));
    }
    return out;
}

inline RunConfig with_seed(RunConfig c, std::uint64_t seed) {
    c.seed = seed;
    return c;
}

/// Ablation over `c.seeds`: one vector of arm results per seed.
template <class T>
std::vector<std::vector<ArmResult>> ablation_grid(const RunConfig& c, std::span<const ArmSpec> arms) {
    std::vector<std::vector<ArmResult>> out;
    for (double s : c.seeds) out.push_back(run_arms<T>(with_seed(c, static_cast<std::uint64_t>(s)), arms));
    return out;
}

// ---------------------------------------------------------------------------
// Lambda sensitivity

struct SweepPoint {
    double lambda = 0.0;
    UnlabeledMode mode = UnlabeledMode::sample;
    std::uint64_t seed = 0;
    EvalReport report;
    double best_val_ra = 0.0;
};

/// RA/SA at each (lambda, mode) pair, per seed, with NAR on a static
/// snapshot whose unlabeled argmax error is raised to `c.sweep_pl_noise`.
template <class T>
std::vector<SweepPoint> lambda_sweep(const RunConfig& c, std::span<const double> lambdas,
                                     std::span<const UnlabeledMode> modes) {
    require(!lambdas.empty() && !modes.empty(), "lambda_sweep: empty grid");
    std::vector<ArmSpec> arms;
    for (auto mode : modes)
        for (double l : lambdas) {
            require(l >= 0.0 && l <= 1.0, "lambda_sweep: lambda must lie in [0, 1]");
            auto a = ArmSpec::make(
                "lambda=" + format_rate(l).substr(0, 5) + " " + (mode == UnlabeledMode::sample ? "sample" : "argmax"),
                GeneratorKind::fixmatch, true, false);
            a.lambda = l;
            a.mode = mode;
            a.pl_noise = c.sweep_pl_noise;
            arms.push_back(a);
        }
    std::vector<SweepPoint> out;
    for (double s : c.seeds) {
        const auto rows = run_arms<T>(with_seed(c, static_cast<std::uint64_t>(s)), arms);
        for (const auto& r : rows)
            out.push_back({*r.spec.lambda, *r.spec.mode, r.seed, r.report, r.best_val_ra});
    }
    return out;
}

inline std::string format_sweep_csv(std::span<const SweepPoint> points) {
    std::ostringstream os;
    os << "lambda,mode,seed,sa,ra,ra_strong,pseudo_label_error\n";
    for (const auto& p : points)
        os << format_rate(p.lambda) << ',' << (p.mode == UnlabeledMode::sample ? "sample" : "argmax") << ','
           << p.seed << ',' << format_rate(p.report.sa) << ',' << format_rate(p.report.ra) << ','
           << format_rate(p.report.ra_strong) << ','
           << (p.report.pseudo_label_error ? format_rate(*p.report.pseudo_label_error) : "") << "\n";
    return os.str();
}

/// Mean RA over seeds for each (mode, lambda), as plot-ready series.
inline std::vector<double> sweep_mean_ra(std::span<const SweepPoint> points, UnlabeledMode mode,
                                         std::span<const double> lambdas) {
    std::vector<double> out;
    for (double l : lambdas) {
        double sum = 0.0;
        int n = 0;
        for (const auto& p : points)
            if (p.mode == mode && p.lambda == l) {
                sum += p.report.ra;
                ++n;
            }
        require(n > 0, "sweep_mean_ra: missing sweep point");
        out.push_back(sum / n);
    }
    return out;
}

}  // namespace snord
