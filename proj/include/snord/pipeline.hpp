#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "snord/experiments.hpp"
#include "snord/run.hpp"

namespace snord {

/// Scalar type of every model the commands train.
using PipelineScalar = float;

struct CommandOptions {
    /// Root directory holding run directories.
    std::filesystem::path out = "runs";
    /// Run id to resume instead of starting a new run.
    std::string resume;
    /// Stop after this many training epochs of this invocation, leaving an
    /// interrupted run that --resume continues (0: run to the end).
    int stop_after_epochs = 0;
    std::function<void(const std::string&)> log;
};

struct CommandResult {
    std::string run_id;
    std::filesystem::path dir;
    RunManifest manifest;
    bool completed = false;
    /// Human-readable summary, when the command produces one.
    std::string summary;
};

namespace detail {

using PT = PipelineScalar;

inline void say(const CommandOptions& o, const std::string& s) {
    if (o.log) o.log(s);
}

struct RunContext {
    RunDir dir;
    RunManifest manifest;
    RunConfig config;
    bool resumed = false;
};

struct EpochBudget {
    int limit = 0;
    int used = 0;
    bool exhausted() const noexcept { return limit > 0 && used >= limit; }
};

/// New run directory, or the run named by o.resume (config taken from its manifest).
inline RunContext begin_run(const std::string& command, const RunConfig& c, const CommandOptions& o,
                            std::string run_id = {}) {
    if (!o.resume.empty()) {
        auto dir = RunDir::open(o.out, o.resume);
        auto m = dir.load_manifest();
        if (m.command != command)
            fail(ErrorKind::invalid_argument, "resume: run " + o.resume + " was made by " + m.command);
        dir.verify(m);
        auto cfg = manifest_config(m);
        dir.append_metric({{"event", "resume"}, {"status", m.status}});
        return {std::move(dir), std::move(m), std::move(cfg), true};
    }
    validate(c);
    if (run_id.empty()) run_id = make_run_id(command, c);
    if (RunDir::exists(o.out, run_id))
        fail(ErrorKind::invalid_argument, "run " + run_id + " already exists; pass --resume " + run_id);
    auto dir = RunDir::create(o.out, run_id);
    RunManifest m;
    m.run_id = run_id;
    m.command = command;
    m.config = to_json(c);
    m.seed = c.seed;
    m.files["config"] = dir.write_artifact("config.json", to_json(c).dump(2) + "\n");
    dir.append_metric({{"event", "start"}, {"command", command}, {"run_id", run_id}});
    return {std::move(dir), std::move(m), c, false};
}

/// Records split and dataset on a new run; checks them on a resumed one.
inline void record_data(RunContext& ctx, const PreparedData& d) {
    const auto fp = hex64(d.split.fingerprint());
    if (ctx.resumed) {
        if (ctx.manifest.split_fingerprint != fp)
            fail(ErrorKind::io, "run " + ctx.manifest.run_id + ": split fingerprint changed since the run started");
        return;
    }
    ctx.manifest.split_fingerprint = fp;
    ctx.manifest.dataset = describe_dataset(ctx.config, d.train, d.test);
    ctx.manifest.files["split"] = ctx.dir.write_artifact("split.txt", format_split(d.split));
    ctx.dir.save_manifest(ctx.manifest);
}

inline CommandResult finish(RunContext& ctx, bool completed, std::string summary = {}) {
    ctx.manifest.status = completed ? "completed" : "interrupted";
    ctx.dir.save_manifest(ctx.manifest);
    ctx.dir.append_metric({{"event", completed ? "completed" : "interrupted"}});
    return {ctx.manifest.run_id, ctx.dir.dir(), ctx.manifest, completed, std::move(summary)};
}

/// Marks the run failed when `body` throws, then rethrows.
template <class F>
CommandResult guarded(RunContext& ctx, F&& body) {
    try {
        return body();
    } catch (const Error& e) {
        ctx.manifest.status = "failed";
        try {
            ctx.dir.append_metric({{"event", "error"}, {"message", e.what()}});
            ctx.dir.save_manifest(ctx.manifest);
        } catch (...) {
        }
        throw;
    }
}

inline nlohmann::json generator_record(const GeneratorEpochMetrics& m, const std::string& phase) {
    return {{"event", "generator_epoch"},
            {"phase", phase},
            {"epoch", m.epoch},
            {"supervised_loss", m.supervised_loss},
            {"unsupervised_loss", m.unsupervised_loss},
            {"mask_rate", m.mask_rate},
            {"lr", m.lr},
            {"pseudo_label_error", std::isnan(m.pseudo_label_accuracy) ? nlohmann::json(nullptr)
                                                                       : nlohmann::json(1.0 - m.pseudo_label_accuracy)}};
}

inline nlohmann::json generator_record(int epoch, const std::vector<double>& losses) {
    double mean = 0.0;
    for (double l : losses) mean += l / static_cast<double>(losses.size());
    return {{"event", "generator_epoch"}, {"phase", "pretrain"}, {"epoch", epoch}, {"supervised_loss", mean}};
}

inline nlohmann::json robust_record(const RobustEpochMetrics& m) {
    auto j = to_json(m);
    j["event"] = "robust_epoch";
    return j;
}

/// Trains `g` up to `target` epochs with a checkpoint after each. False when
/// the epoch budget ran out first.
template <class Trainer>
bool pretrain_generator(Trainer& g, int target, RunContext& ctx, EpochBudget& budget, const CommandOptions& o) {
    while (g.epoch() < target) {
        if (budget.exhausted()) return false;
        if constexpr (std::is_same_v<Trainer, GeneratorTrainer<PT>>) {
            const auto m = g.train_epoch();
            ctx.dir.append_metric(generator_record(m, "pretrain"));
            say(o, "generator epoch " + std::to_string(m.epoch) + " pl-acc " + format_rate(m.pseudo_label_accuracy));
        } else {
            const auto losses = g.train_epoch();
            ctx.dir.append_metric(generator_record(g.epoch(), losses));
            say(o, "generator epoch " + std::to_string(g.epoch()));
        }
        auto& st = ctx.manifest.ensure_stage("generator");
        st.checkpoints["state"] = ctx.dir.write_artifact("checkpoints/generator.ckpt", g.encode_state());
        st.epochs_done = g.epoch();
        ctx.dir.save_manifest(ctx.manifest);
        ++budget.used;
    }
    return true;
}

/// Snapshot 0 of a pretrained generator, on clean inputs.
inline SnapshotPtr record_initial_snapshot(const Classifier<PT>& model, int epoch, const PreparedData& d,
                                           RunContext& ctx, const std::string& stage) {
    auto snap = std::make_shared<const PseudoLabelSnapshot>(
        snapshot_pseudo_labels(model, d.train, d.split.pool(), AugmentationPolicy::identity(), epoch, 0));
    auto& st = ctx.manifest.ensure_stage(stage);
    st.snapshots["0"] = ctx.dir.write_artifact("snapshots/snapshot_0.pls", snap->encode());
    nlohmann::json rec = {{"event", "snapshot"},
                          {"snapshot_id", 0},
                          {"generator_epoch", epoch},
                          {"content_hash", hex64(snap->content_hash())}};
    if (!d.split.unlabeled.empty())
        rec["pseudo_label_error"] = pseudo_label_error_rate(*snap, d.train.labels(), d.split.unlabeled);
    ctx.dir.append_metric(rec);
    ctx.dir.save_manifest(ctx.manifest);
    return snap;
}

inline SnapshotPtr read_snapshot(const RunDir& dir, const ArtifactRef& a) {
    return std::make_shared<const PseudoLabelSnapshot>(PseudoLabelSnapshot::decode(dir.read_artifact(a)));
}

inline Classifier<PT> initial_model(const RunConfig& c, const Dataset& train, bool generator) {
    const int C = train.num_classes();
    Classifier<PT> m(train.shape(), C, generator ? generator_architecture(c, C) : robust_architecture(c, C));
    m.init(derive_seed(c.seed, {generator ? 110u : 112u}));
    return m;
}

inline void check_generator_algo(const RunConfig& c) {
    if (c.ord_enabled && c.generator_algo != "fixmatch")
        fail(ErrorKind::config, field_error("ord_enabled", "online distillation needs generator_algo \"fixmatch\""));
}

inline nlohmann::json ord_state_json(const OrdState& s) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& r : s.refreshes)
        ev.push_back({{"generator_epoch", r.generator_epoch}, {"snapshot_id", r.snapshot_id},
                      {"content_hash", hex64(r.content_hash)}});
    return {{"generator_epochs", s.generator_epochs}, {"since_refresh", s.since_refresh}, {"next_id", s.next_id},
            {"current", s.current ? s.current->id() : 0}, {"refreshes", ev}};
}

inline void restore_ord_state(OrdState& s, const nlohmann::json& j) {
    s.generator_epochs = j.at("generator_epochs").get<int>();
    s.since_refresh = j.at("since_refresh").get<int>();
    s.next_id = j.at("next_id").get<std::uint64_t>();
    s.refreshes.clear();
    for (const auto& r : j.at("refreshes"))
        s.refreshes.push_back({r.at("generator_epoch").get<int>(), r.at("snapshot_id").get<std::uint64_t>(),
                               std::stoull(r.at("content_hash").get<std::string>(), nullptr, 16)});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// Builds the dataset of `c` and writes its SSL split file to `path`.
inline SSLSplit cmd_split(const RunConfig& c, const std::string& path) {
    validate(c);
    const auto d = prepare_data(c);
    save_split(d.split, path);
    return d.split;
}

/// Writes the synthetic train and test sets of `c` as a dataset directory.
inline void cmd_make_synthetic(RunConfig c, const std::string& dir) {
    c.dataset = "synthetic";
    const auto d = prepare_data(c);
    save_dataset(dir, {{"train", &d.train}, {"test", &d.test}});
}

/// Trains the pseudo-label generator for gen_epochs epochs and records snapshot 0.
inline CommandResult cmd_train_generator(const RunConfig& c_in, const CommandOptions& o) {
    auto ctx = detail::begin_run("train-generator", c_in, o);
    return detail::guarded(ctx, [&]() -> CommandResult {
        const auto& c = ctx.config;
        const auto d = prepare_data(c);
        detail::record_data(ctx, d);
        auto& st = ctx.manifest.ensure_stage("generator");
        st.epochs_total = c.gen_epochs;
        detail::EpochBudget budget{o.stop_after_epochs};
        const auto init = detail::initial_model(c, d.train, true);
        const auto gcfg = generator_config(c);

        std::optional<Classifier<detail::PT>> model;
        int epoch = 0;
        if (c.generator_algo == "fixmatch") {
            GeneratorTrainer<detail::PT> g(d.train, d.split, gcfg, init);
            if (st.checkpoints.count("state"))
                g.restore(decode_checkpoint<detail::PT>(ctx.dir.read_artifact(st.checkpoints.at("state"))));
            if (!detail::pretrain_generator(g, c.gen_epochs, ctx, budget, o)) return detail::finish(ctx, false);
            model = g.model();
            epoch = g.epoch();
        } else {
            SupervisedTrainer<detail::PT> g(d.train, d.split.labeled, gcfg, init);
            if (st.checkpoints.count("state"))
                g.restore(decode_checkpoint<detail::PT>(ctx.dir.read_artifact(st.checkpoints.at("state"))));
            if (!detail::pretrain_generator(g, c.gen_epochs, ctx, budget, o)) return detail::finish(ctx, false);
            model = g.model();
            epoch = g.epoch();
        }
        detail::record_initial_snapshot(*model, epoch, d, ctx, "generator");

        // Plot data: pseudo-label error per generator epoch, from the metrics stream.
        std::vector<double> xs, ys;
        for (const auto& r : ctx.dir.read_metrics())
            if (r.value("event", "") == "generator_epoch" && r.contains("pseudo_label_error") &&
                !r["pseudo_label_error"].is_null()) {
                xs.push_back(r["epoch"].get<double>());
                ys.push_back(r["pseudo_label_error"].get<double>());
            }
        if (!xs.empty())
            ctx.manifest.files["pl_error_curve"] = ctx.dir.write_artifact(
                "reports/pl_error_vs_epoch.dat", format_xy(xs, ys, "generator_epoch", "pseudo_label_error"));
        ctx.manifest.ensure_stage("generator").status = "completed";
        return detail::finish(ctx, true);
    });
}

/// Adversarial training of the robust model. `source` is a completed
/// train-generator run id, or "joint" to pretrain the generator in this run.
/// With ord_enabled the generator keeps training and refreshes the pseudo
/// labels every ord_period generator epochs.
inline CommandResult cmd_train_robust(const RunConfig& c_in, const std::string& source, const CommandOptions& o) {
    using detail::PT;
    const bool joint = source == "joint";
    if (!joint && o.resume.empty() && !RunDir::exists(o.out, source))
        fail(ErrorKind::missing_dependency, "generator run " + source + " not found under " + o.out.string());
    auto ctx = detail::begin_run(joint ? "train-robust-joint" : "train-robust", c_in, o);
    return detail::guarded(ctx, [&]() -> CommandResult {
        const auto& c = ctx.config;
        detail::check_generator_algo(c);
        const auto d = prepare_data(c);
        detail::record_data(ctx, d);
        detail::EpochBudget budget{o.stop_after_epochs};
        const auto gcfg = generator_config(c);
        const auto ginit = detail::initial_model(c, d.train, true);

        std::optional<GeneratorTrainer<PT>> gen;
        SnapshotPtr snap0;
        if (joint) {
            auto& gs = ctx.manifest.ensure_stage("generator");
            gs.epochs_total = c.gen_epochs;
            const bool have_state = gs.checkpoints.count("state") > 0;
            std::optional<ArtifactRef> state_ref;
            if (have_state) state_ref = gs.checkpoints.at("state");
            if (c.generator_algo == "fixmatch") {
                gen.emplace(d.train, d.split, gcfg, ginit);
                if (state_ref) gen->restore(decode_checkpoint<PT>(ctx.dir.read_artifact(*state_ref)));
                if (!detail::pretrain_generator(*gen, c.gen_epochs, ctx, budget, o)) return detail::finish(ctx, false);
                if (!ctx.manifest.stage("generator")->snapshots.count("0"))
                    detail::record_initial_snapshot(gen->model(), gen->epoch(), d, ctx, "generator");
            } else {
                SupervisedTrainer<PT> s(d.train, d.split.labeled, gcfg, ginit);
                if (state_ref) s.restore(decode_checkpoint<PT>(ctx.dir.read_artifact(*state_ref)));
                if (!detail::pretrain_generator(s, c.gen_epochs, ctx, budget, o)) return detail::finish(ctx, false);
                if (!ctx.manifest.stage("generator")->snapshots.count("0"))
                    detail::record_initial_snapshot(s.model(), s.epoch(), d, ctx, "generator");
            }
            ctx.manifest.stage("generator")->status = "completed";
            snap0 = detail::read_snapshot(ctx.dir, ctx.manifest.stage("generator")->snapshots.at("0"));
        } else {
            const auto parent = RunDir::open(o.out, source);
            const auto pm = parent.load_manifest();
            if (pm.command != "train-generator")
                fail(ErrorKind::missing_dependency, "run " + source + " is not a train-generator run");
            if (pm.status != "completed")
                fail(ErrorKind::missing_dependency, "generator run " + source + " has not completed");
            parent.verify(pm);
            if (pm.split_fingerprint != ctx.manifest.split_fingerprint)
                fail(ErrorKind::config, "config: split differs from generator run " + source);
            const auto* gs = pm.stage("generator");
            if (!gs || !gs->snapshots.count("0") || !gs->checkpoints.count("state"))
                fail(ErrorKind::missing_dependency, "generator run " + source + " lacks its snapshot or checkpoint");
            ctx.manifest.parent_run = source;
            snap0 = detail::read_snapshot(parent, gs->snapshots.at("0"));
            if (c.ord_enabled) {
                gen.emplace(d.train, d.split, gcfg, ginit);
                gen->restore(decode_checkpoint<PT>(parent.read_artifact(gs->checkpoints.at("state"))));
            }
        }

        RobustTrainer<PT> rob(d.train, d.split, nar_config(c), robust_config(c), detail::initial_model(c, d.train, false),
                              d.val_data());
        auto& rs = ctx.manifest.ensure_stage("robust");
        rs.epochs_total = c.rob_epochs;
        OrdState ord;
        if (rs.checkpoints.count("state")) {
            rob.restore(decode_checkpoint<PT>(ctx.dir.read_artifact(rs.checkpoints.at("state"))),
                        decode_checkpoint<PT>(ctx.dir.read_artifact(rs.checkpoints.at("best"))));
            const auto oj = nlohmann::json::parse(ctx.dir.read_artifact(rs.checkpoints.at("ord")));
            detail::restore_ord_state(ord, oj);
            ord.current = detail::read_snapshot(ctx.dir, rs.snapshots.at(std::to_string(oj.at("current").get<std::uint64_t>())));
            if (gen && rs.checkpoints.count("generator"))
                gen->restore(decode_checkpoint<PT>(ctx.dir.read_artifact(rs.checkpoints.at("generator"))));
        } else {
            ord.current = snap0;
            rs.snapshots["0"] = ctx.dir.write_artifact("snapshots/snapshot_0.pls", snap0->encode());
        }
        const auto schedule = ord_schedule(c);
        std::size_t logged_refreshes = ord.refreshes.size();

        auto after_epoch = [&](const RobustEpochMetrics& m) {
            ctx.dir.append_metric(detail::robust_record(m));
            auto& stage = *ctx.manifest.stage("robust");
            for (; logged_refreshes < ord.refreshes.size(); ++logged_refreshes) {
                const auto& ev = ord.refreshes[logged_refreshes];
                ctx.dir.append_metric({{"event", "refresh"},
                                       {"generator_epoch", ev.generator_epoch},
                                       {"snapshot_id", ev.snapshot_id},
                                       {"content_hash", hex64(ev.content_hash)}});
            }
            const auto cur = std::to_string(ord.current->id());
            if (!stage.snapshots.count(cur))
                stage.snapshots[cur] =
                    ctx.dir.write_artifact("snapshots/snapshot_" + cur + ".pls", ord.current->encode());
            stage.checkpoints["state"] = ctx.dir.write_artifact("checkpoints/robust.ckpt", rob.encode_state());
            stage.checkpoints["best"] = ctx.dir.write_artifact("checkpoints/robust_best.ckpt", rob.encode_best());
            if (gen && schedule.enabled)
                stage.checkpoints["generator"] =
                    ctx.dir.write_artifact("checkpoints/generator_ord.ckpt", gen->encode_state());
            stage.checkpoints["ord"] =
                ctx.dir.write_artifact("checkpoints/ord_state.json", detail::ord_state_json(ord).dump() + "\n");
            stage.epochs_done = rob.epoch();
            ctx.dir.save_manifest(ctx.manifest);
            detail::say(o, "robust epoch " + std::to_string(m.epoch) + " val SA " + format_rate(m.sa_val) + " RA " +
                               format_rate(m.ra_val) + " snapshot " + std::to_string(m.snapshot_id));
            ++budget.used;
            return !budget.exhausted();
        };

        if (budget.exhausted()) return detail::finish(ctx, false);
        if (schedule.enabled) {
            const auto rec = interleave(*gen, rob, schedule, c.rob_epochs, ord, d.train, after_epoch);
            for (const auto& g : rec.generator) ctx.dir.append_metric(detail::generator_record(g, "ord"));
        } else {
            rob.set_snapshot(ord.current);
            while (rob.epoch() < c.rob_epochs)
                if (!after_epoch(rob.train_epoch())) break;
        }
        if (rob.epoch() < c.rob_epochs) return detail::finish(ctx, false);

        auto& stage = *ctx.manifest.stage("robust");
        stage.status = "completed";
        std::vector<double> xs, ys;
        for (const auto& h : rob.history()) {
            xs.push_back(h.epoch);
            ys.push_back(h.ra_val);
        }
        ctx.manifest.files["val_ra_curve"] =
            ctx.dir.write_artifact("reports/val_ra_vs_epoch.dat", format_xy(xs, ys, "robust_epoch", "val_ra"));
        ctx.dir.append_metric({{"event", "robust_done"}, {"best_epoch", rob.best_epoch()}, {"best_val_ra", rob.best_ra()}});
        return detail::finish(ctx, true);
    });
}

/// Evaluates the best checkpoint of a completed robust run into a new eval
/// run. Attack keys (epsilon, eval_steps, eval_restarts, eval_limit) come
/// from `attack` when given, otherwise from the robust run's config.
inline CommandResult cmd_eval(const std::string& run_id, const std::optional<RunConfig>& attack,
                              const CommandOptions& o) {
    using detail::PT;
    const auto parent = RunDir::open(o.out, run_id);
    const auto pm = parent.load_manifest();
    const auto* rs = pm.stage("robust");
    if (!rs || rs->status != "completed" || !rs->checkpoints.count("best"))
        fail(ErrorKind::missing_dependency, "run " + run_id + " has no completed robust stage");
    parent.verify(pm);
    auto c = manifest_config(pm);
    if (attack) {
        c.epsilon = attack->epsilon;
        c.eval_steps = attack->eval_steps;
        c.eval_restarts = attack->eval_restarts;
        c.eval_limit = attack->eval_limit;
        validate(c);
    }
    CommandOptions eo = o;
    eo.resume.clear();
    auto ctx = detail::begin_run("eval", c, eo, "eval-" + run_id + "-" + config_hash(c).substr(0, 8));
    return detail::guarded(ctx, [&]() -> CommandResult {
        ctx.manifest.parent_run = run_id;
        const auto d = prepare_data(c);
        detail::record_data(ctx, d);
        if (ctx.manifest.split_fingerprint != pm.split_fingerprint)
            fail(ErrorKind::io, "eval: split of run " + run_id + " cannot be reproduced");
        const auto best = decode_checkpoint<PT>(parent.read_artifact(rs->checkpoints.at("best"))).model;
        const Dataset test = limit_examples(d.test, c.eval_limit);
        auto report = evaluate(best, test, eval_specs(c), run_id);
        if (rs->snapshots.count("0") && !d.split.unlabeled.empty()) {
            const auto snap = detail::read_snapshot(parent, rs->snapshots.at("0"));
            report.pseudo_label_error = pseudo_label_error_rate(*snap, d.train.labels(), d.split.unlabeled);
        }
        const std::vector<EvalReport> rows{report};
        auto& f = ctx.manifest.files;
        f["report"] = ctx.dir.write_artifact("reports/report.csv", format_report_csv(rows));
        f["records"] = ctx.dir.write_artifact("reports/records.csv", format_records_csv(report.records));
        f["strong_records"] =
            ctx.dir.write_artifact("reports/strong_records.csv", format_records_csv(report.strong_records));
        const auto summary = format_summary(rows, "evaluation of " + run_id);
        f["summary"] = ctx.dir.write_artifact("reports/summary.txt", summary);
        nlohmann::json rec = {{"event", "eval"},          {"run", run_id},        {"sa", report.sa},
                              {"ra", report.ra},          {"ra_strong", report.ra_strong},
                              {"examples", test.size()},  {"epsilon", c.epsilon}, {"eval_steps", c.eval_steps},
                              {"eval_restarts", c.eval_restarts}};
        if (report.pseudo_label_error) rec["pseudo_label_error"] = *report.pseudo_label_error;
        ctx.dir.append_metric(rec);
        return detail::finish(ctx, true, summary);
    });
}

/// Ablation rows (a)-(e), the hard-label baseline and the oracle, over `seeds`.
inline CommandResult cmd_ablate(const RunConfig& c_in, const CommandOptions& o) {
    using detail::PT;
    CommandOptions ao = o;
    ao.resume.clear();
    auto ctx = detail::begin_run("ablate", c_in, ao);
    return detail::guarded(ctx, [&]() -> CommandResult {
        const auto& c = ctx.config;
        detail::record_data(ctx, prepare_data(with_seed(c, static_cast<std::uint64_t>(c.seeds.front()))));
        auto arms = ablation_rows();
        arms.push_back(hard_label_arm());
        arms.push_back(oracle_arm());
        std::vector<std::vector<ArmResult>> grid;
        std::vector<EvalReport> per_seed_rows;
        std::vector<double> curve_x, curve_y;
        for (double s : c.seeds) {
            const auto seed = static_cast<std::uint64_t>(s);
            detail::say(o, "seed " + std::to_string(seed));
            grid.push_back(run_arms<PT>(with_seed(c, seed), arms));
            for (const auto& r : grid.back()) {
                for (const auto& h : r.history) {
                    auto j = detail::robust_record(h);
                    j["arm"] = r.spec.name;
                    j["seed"] = seed;
                    ctx.dir.append_metric(j);
                }
                for (const auto& g : r.generator_history) {
                    auto j = detail::generator_record(g, "ord");
                    j["arm"] = r.spec.name;
                    j["seed"] = seed;
                    ctx.dir.append_metric(j);
                    if (seed == static_cast<std::uint64_t>(c.seeds.front()) && r.spec.name == ablation_rows()[4].name &&
                        !std::isnan(g.pseudo_label_accuracy)) {
                        curve_x.push_back(c.gen_epochs + static_cast<double>(curve_x.size()) + 1);
                        curve_y.push_back(1.0 - g.pseudo_label_accuracy);
                    }
                }
                nlohmann::json rec = {{"event", "arm"},        {"arm", r.spec.name},       {"seed", seed},
                                      {"sa", r.report.sa},     {"ra", r.report.ra},        {"ra_strong", r.report.ra_strong},
                                      {"best_val_ra", r.best_val_ra}, {"best_epoch", r.best_epoch}};
                if (r.report.pseudo_label_error) rec["pseudo_label_error"] = *r.report.pseudo_label_error;
                if (r.report.relative_ra) rec["relative_ra"] = *r.report.relative_ra;
                ctx.dir.append_metric(rec);
                auto row = r.report;
                row.name = r.spec.name + " seed=" + std::to_string(seed);
                per_seed_rows.push_back(std::move(row));
                detail::say(o, "  " + r.spec.name + " RA " + format_rate(r.report.ra));
            }
        }
        const auto mean = mean_reports(grid);
        auto& f = ctx.manifest.files;
        f["ablation"] = ctx.dir.write_artifact("reports/ablation.csv", format_report_csv(mean));
        f["ablation_seeds"] = ctx.dir.write_artifact("reports/ablation_seeds.csv", format_report_csv(per_seed_rows));
        if (!curve_x.empty())
            f["pl_error_curve"] = ctx.dir.write_artifact("reports/pl_error_vs_epoch.dat",
                                                         format_xy(curve_x, curve_y, "generator_epoch", "pseudo_label_error"));
        const auto summary = format_summary(mean, "ablation, mean over " + std::to_string(c.seeds.size()) + " seeds");
        f["summary"] = ctx.dir.write_artifact("reports/summary.txt", summary);
        return detail::finish(ctx, true, summary);
    });
}

/// RA at each lambda in sample and argmax mode under sweep_pl_noise pseudo-label error.
inline CommandResult cmd_sweep_lambda(const RunConfig& c_in, const CommandOptions& o) {
    using detail::PT;
    CommandOptions so = o;
    so.resume.clear();
    auto ctx = detail::begin_run("sweep-lambda", c_in, so);
    return detail::guarded(ctx, [&]() -> CommandResult {
        const auto& c = ctx.config;
        detail::record_data(ctx, prepare_data(with_seed(c, static_cast<std::uint64_t>(c.seeds.front()))));
        const std::vector<UnlabeledMode> modes{UnlabeledMode::sample, UnlabeledMode::argmax};
        const auto points = lambda_sweep<PT>(c, c.sweep_lambdas, modes);
        for (const auto& p : points) {
            nlohmann::json rec = {{"event", "sweep_point"},
                                  {"lambda", p.lambda},
                                  {"mode", p.mode == UnlabeledMode::sample ? "sample" : "argmax"},
                                  {"seed", p.seed},
                                  {"sa", p.report.sa},
                                  {"ra", p.report.ra},
                                  {"ra_strong", p.report.ra_strong},
                                  {"best_val_ra", p.best_val_ra}};
            if (p.report.pseudo_label_error) rec["pseudo_label_error"] = *p.report.pseudo_label_error;
            ctx.dir.append_metric(rec);
        }
        const auto sample = sweep_mean_ra(points, UnlabeledMode::sample, c.sweep_lambdas);
        const auto argmax_ra = sweep_mean_ra(points, UnlabeledMode::argmax, c.sweep_lambdas);
        auto& f = ctx.manifest.files;
        f["sweep"] = ctx.dir.write_artifact("reports/sweep.csv", format_sweep_csv(points));
        f["sweep_sample"] =
            ctx.dir.write_artifact("reports/sweep_sample.dat", format_xy(c.sweep_lambdas, sample, "lambda", "mean_ra"));
        f["sweep_argmax"] =
            ctx.dir.write_artifact("reports/sweep_argmax.dat", format_xy(c.sweep_lambdas, argmax_ra, "lambda", "mean_ra"));
        std::ostringstream os;
        os << "lambda sweep, mean RA over " << c.seeds.size() << " seeds, pseudo-label error "
           << format_rate(c.sweep_pl_noise) << "\n";
        os << "lambda    sample    argmax\n";
        for (std::size_t k = 0; k < c.sweep_lambdas.size(); ++k)
            os << format_rate(c.sweep_lambdas[k]) << "  " << format_rate(sample[k]) << "  " << format_rate(argmax_ra[k])
               << "\n";
        f["summary"] = ctx.dir.write_artifact("reports/summary.txt", os.str());
        return detail::finish(ctx, true, os.str());
    });
}

}  // namespace snord
