// snord: command-line front end for the SNORD training pipeline.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "snord/snord.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitMissing = 4;

int exit_code(snord::ErrorKind k) {
    switch (k) {
    case snord::ErrorKind::config:
    case snord::ErrorKind::invalid_argument: return kExitConfig;
    case snord::ErrorKind::divergence: return kExitDivergence;
    case snord::ErrorKind::missing_dependency: return kExitMissing;
    case snord::ErrorKind::io: return kExitFailure;
    }
    return kExitFailure;
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "runs";
    std::string resume;
    int stop_after = 0;
    bool quiet = false;
};

snord::RunConfig load(const Common& g) {
    snord::RunConfig c;
    if (!g.config.empty()) {
        c = snord::load_config(g.config);
    } else {
        snord::apply_env(c);
    }
    if (g.seed) c.seed = *g.seed;
    snord::validate(c);
    return c;
}

snord::CommandOptions options(const Common& g) {
    snord::CommandOptions o;
    o.out = g.out;
    o.resume = g.resume;
    o.stop_after_epochs = g.stop_after;
    if (!g.quiet) o.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
    return o;
}

void report(const snord::CommandResult& r) {
    std::printf("run %s %s\n", r.run_id.c_str(), r.completed ? "completed" : "interrupted");
    std::printf("dir %s\n", r.dir.string().c_str());
    if (!r.summary.empty()) std::printf("%s", r.summary.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised adversarial training with noise-aware rectification and online robust distillation"};
    app.require_subcommand(1);
    Common g;
    auto add_common = [&](CLI::App* sub, bool training) {
        sub->add_option("--config", g.config, "JSON config file (SNORD_<KEY> environment variables override it)");
        sub->add_option("--seed", g.seed, "override the config seed");
        sub->add_option("--out", g.out, "root directory for run directories")->capture_default_str();
        sub->add_flag("--quiet", g.quiet, "no progress output");
        if (training) {
            sub->add_option("--resume", g.resume, "resume an interrupted run by id");
            sub->add_option("--stop-after", g.stop_after, "stop after this many epochs, leaving a resumable run");
        }
    };

    std::string split_out;
    std::optional<double> fraction;
    auto* split = app.add_subcommand("split", "write the SSL split file of a dataset");
    add_common(split, false);
    split->add_option("--fraction", fraction, "labeled fraction (overrides label_fraction)");
    split->add_option("--split-out", split_out, "split file path")->required();

    std::string synth_dir;
    auto* synth = app.add_subcommand("make-synthetic", "write the built-in synthetic dataset to a directory");
    add_common(synth, false);
    synth->add_option("--dataset-out", synth_dir, "dataset directory")->required();

    auto* gen = app.add_subcommand("train-generator", "train the pseudo-label generator");
    add_common(gen, true);

    std::string source;
    auto* rob = app.add_subcommand("train-robust", "adversarially train the robust model");
    add_common(rob, true);
    rob->add_option("source", source, "train-generator run id, or \"joint\"")->required();

    std::string eval_run;
    auto* ev = app.add_subcommand("eval", "evaluate a robust run (attack keys from --config)");
    add_common(ev, false);
    ev->add_option("run", eval_run, "robust run id")->required();

    auto* ablate = app.add_subcommand("ablate", "ablation rows (a)-(e), hard-label baseline and oracle");
    add_common(ablate, false);

    auto* sweep = app.add_subcommand("sweep-lambda", "lambda sensitivity in sample and argmax mode");
    add_common(sweep, false);

    auto* keys = app.add_subcommand("config-keys", "list config keys, defaults and environment variables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (keys->parsed()) {
            const snord::RunConfig defaults;
            for (const auto& f : snord::config_fields())
                std::printf("%-32s %-24s %-40s %s\n", f.key.c_str(), f.get(defaults).dump().c_str(),
                            snord::env_name(f.key).c_str(), f.doc.c_str());
            return kExitOk;
        }
        auto c = load(g);
        const auto o = options(g);
        if (split->parsed()) {
            if (fraction) c.label_fraction = *fraction;
            const auto s = snord::cmd_split(c, split_out);
            std::printf("split %s labeled %zu unlabeled %zu val %zu fingerprint %s\n", split_out.c_str(),
                        s.labeled.size(), s.unlabeled.size(), s.val.size(), snord::hex64(s.fingerprint()).c_str());
        } else if (synth->parsed()) {
            snord::cmd_make_synthetic(c, synth_dir);
            std::printf("dataset %s\n", synth_dir.c_str());
        } else if (gen->parsed()) {
            report(snord::cmd_train_generator(c, o));
        } else if (rob->parsed()) {
            report(snord::cmd_train_robust(c, source, o));
        } else if (ev->parsed()) {
            std::optional<snord::RunConfig> attack;
            if (!g.config.empty() || g.seed) attack = c;
            report(snord::cmd_eval(eval_run, attack, o));
        } else if (ablate->parsed()) {
            report(snord::cmd_ablate(c, o));
        } else if (sweep->parsed()) {
            report(snord::cmd_sweep_lambda(c, o));
        }
    } catch (const snord::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
    return kExitOk;
}
