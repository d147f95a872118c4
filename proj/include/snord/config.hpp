#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "snord/attacks.hpp"
#include "snord/common.hpp"
#include "snord/data.hpp"
#include "snord/evalreport.hpp"
#include "snord/nar.hpp"
#include "snord/ord.hpp"
#include "snord/robust_trainer.hpp"
#include "snord/ssl_generator.hpp"

namespace snord {

/// Every tunable of a run, as one flat key set. Defaults follow the
/// published hyperparameters where they exist (CIFAR-10 values for the
/// generator weight decay); the synthetic-data keys describe the built-in
/// benchmark.
struct RunConfig {
    std::uint64_t seed = 0;

    // data
    std::string dataset = "synthetic";  // "synthetic" or a dataset directory
    int synth_classes = 10;
    int synth_examples_per_class = 500;
    int synth_test_examples_per_class = 50;
    int synth_channels = 1;
    int synth_height = 8;
    int synth_width = 8;
    int synth_blobs_per_class = 3;
    int synth_modes_per_class = 2;
    double synth_center_jitter = 0.75;
    double synth_noise_std = 0.15;
    double synth_distractor = 0.5;
    double label_fraction = 0.1;
    double val_fraction = 0.1;
    int aug_padding = 1;
    double aug_flip = 0.5;

    // pseudo-label generator
    std::string generator_algo = "fixmatch";  // "fixmatch" or "supervised"
    std::string generator_arch = "";           // empty: built-in default
    double tau = 0.95;
    int mu = 5;
    int gen_batch_size = 64;
    double gen_lr = 0.03;
    double gen_momentum = 0.9;
    bool gen_nesterov = true;
    double gen_weight_decay = 1e-3;
    int gen_epochs = 20;
    int gen_steps_per_epoch = 0;  // 0: one pass over the labeled set
    double unsup_weight = 1.0;

    // noise-aware rectification
    bool use_nar = true;
    double lambda = 0.5;
    std::string nar_mode = "sample";  // "sample" or "argmax"
    bool nar_resample_per_epoch = true;

    // online robust distillation
    bool ord_enabled = true;
    int ord_period = 5;
    int ord_gen_epochs_per_robust_epoch = 1;

    // robust training
    std::string robust_arch = "";
    std::string objective = "snord";  // "snord" or "hard_label"
    double beta = 6.0;
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int attack_steps = 10;
    int rob_epochs = 20;
    int rob_batch_size = 128;
    double rob_lr = 0.1;
    double rob_momentum = 0.9;
    double rob_weight_decay = 5e-4;
    std::vector<double> lr_milestones{0.5, 0.75};
    double lr_decay = 0.1;
    bool ce_on_adversarial = false;
    int val_limit = 0;

    // evaluation
    int eval_steps = 20;
    int eval_restarts = 5;
    int eval_limit = 0;

    // experiment drivers
    std::vector<double> sweep_lambdas{0.25, 0.375, 0.5};
    double sweep_pl_noise = 0.5;
    std::vector<double> seeds{0, 1, 2};
};

namespace detail {

struct ConfigField {
    std::string key;
    std::string doc;
    std::function<nlohmann::json(const RunConfig&)> get;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
};

inline std::string field_error(const std::string& key, const std::string& what) {
    return "config." + key + ": " + what;
}

template <class V>
ConfigField bind(const char* key, V RunConfig::*m, const char* doc) {
    ConfigField f;
    f.key = key;
    f.doc = doc;
    f.get = [m](const RunConfig& c) { return nlohmann::json(c.*m); };
    f.set = [m, k = std::string(key)](RunConfig& c, const nlohmann::json& j) {
        if constexpr (std::is_same_v<V, bool>) {
            if (!j.is_boolean()) fail(ErrorKind::config, field_error(k, "expected a boolean"));
            c.*m = j.get<bool>();
        } else if constexpr (std::is_same_v<V, std::string>) {
            if (!j.is_string()) fail(ErrorKind::config, field_error(k, "expected a string"));
            c.*m = j.get<std::string>();
        } else if constexpr (std::is_same_v<V, std::vector<double>>) {
            if (!j.is_array()) fail(ErrorKind::config, field_error(k, "expected an array of numbers"));
            std::vector<double> v;
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (!j[i].is_number())
                    fail(ErrorKind::config, field_error(k + "[" + std::to_string(i) + "]", "expected a number"));
                v.push_back(j[i].get<double>());
            }
            c.*m = std::move(v);
        } else if constexpr (std::is_same_v<V, std::uint64_t>) {
            if (!j.is_number_unsigned()) fail(ErrorKind::config, field_error(k, "expected a non-negative integer"));
            c.*m = j.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<V>) {
            if (!j.is_number_integer()) fail(ErrorKind::config, field_error(k, "expected an integer"));
            c.*m = j.get<V>();
        } else {
            if (!j.is_number()) fail(ErrorKind::config, field_error(k, "expected a number"));
            c.*m = j.get<V>();
        }
    };
    return f;
}

}  // namespace detail

/// The documented key set, in display order.
inline const std::vector<detail::ConfigField>& config_fields() {
    using detail::bind;
    using R = RunConfig;
    static const std::vector<detail::ConfigField> fields = {
        bind("seed", &R::seed, "master seed"),
        bind("dataset", &R::dataset, "\"synthetic\" or a dataset directory"),
        bind("synth_classes", &R::synth_classes, "synthetic: class count"),
        bind("synth_examples_per_class", &R::synth_examples_per_class, "synthetic: training examples per class"),
        bind("synth_test_examples_per_class", &R::synth_test_examples_per_class, "synthetic: test examples per class"),
        bind("synth_channels", &R::synth_channels, "synthetic: image channels"),
        bind("synth_height", &R::synth_height, "synthetic: image height"),
        bind("synth_width", &R::synth_width, "synthetic: image width"),
        bind("synth_blobs_per_class", &R::synth_blobs_per_class, "synthetic: blobs in each class prototype"),
        bind("synth_modes_per_class", &R::synth_modes_per_class, "synthetic: prototypes per class"),
        bind("synth_center_jitter", &R::synth_center_jitter, "synthetic: blob centre jitter in pixels"),
        bind("synth_noise_std", &R::synth_noise_std, "synthetic: pixel noise std"),
        bind("synth_distractor", &R::synth_distractor, "synthetic: distractor blob amplitude"),
        bind("label_fraction", &R::label_fraction, "fraction of the training pool that is labeled"),
        bind("val_fraction", &R::val_fraction, "validation carve-out when the dataset has no val split"),
        bind("aug_padding", &R::aug_padding, "weak augmentation crop padding"),
        bind("aug_flip", &R::aug_flip, "weak augmentation horizontal flip probability"),
        bind("generator_algo", &R::generator_algo, "\"fixmatch\" or \"supervised\""),
        bind("generator_arch", &R::generator_arch, "generator layer string (empty: default)"),
        bind("tau", &R::tau, "confidence threshold"),
        bind("mu", &R::mu, "unlabeled to labeled batch ratio"),
        bind("gen_batch_size", &R::gen_batch_size, "generator labeled batch size"),
        bind("gen_lr", &R::gen_lr, "generator learning rate"),
        bind("gen_momentum", &R::gen_momentum, "generator SGD momentum"),
        bind("gen_nesterov", &R::gen_nesterov, "generator Nesterov momentum"),
        bind("gen_weight_decay", &R::gen_weight_decay, "generator weight decay"),
        bind("gen_epochs", &R::gen_epochs, "generator epochs before robust training"),
        bind("gen_steps_per_epoch", &R::gen_steps_per_epoch, "generator steps per epoch (0: one labeled pass)"),
        bind("unsup_weight", &R::unsup_weight, "weight of the unlabeled consistency loss"),
        bind("use_nar", &R::use_nar, "rectify targets"),
        bind("lambda", &R::lambda, "NAR weight of the predicted distribution"),
        bind("nar_mode", &R::nar_mode, "\"sample\" or \"argmax\" pseudo labels"),
        bind("nar_resample_per_epoch", &R::nar_resample_per_epoch, "redraw sampled labels every epoch"),
        bind("ord_enabled", &R::ord_enabled, "refresh pseudo labels from a co-trained generator"),
        bind("ord_period", &R::ord_period, "generator epochs between refreshes (T)"),
        bind("ord_gen_epochs_per_robust_epoch", &R::ord_gen_epochs_per_robust_epoch,
             "generator epochs per robust epoch"),
        bind("robust_arch", &R::robust_arch, "robust model layer string (empty: default)"),
        bind("objective", &R::objective, "\"snord\" or \"hard_label\""),
        bind("beta", &R::beta, "KL weight"),
        bind("epsilon", &R::epsilon, "L-inf budget"),
        bind("step_size", &R::step_size, "training attack step size"),
        bind("attack_steps", &R::attack_steps, "training attack steps"),
        bind("rob_epochs", &R::rob_epochs, "robust training epochs"),
        bind("rob_batch_size", &R::rob_batch_size, "robust batch size"),
        bind("rob_lr", &R::rob_lr, "robust learning rate"),
        bind("rob_momentum", &R::rob_momentum, "robust SGD momentum"),
        bind("rob_weight_decay", &R::rob_weight_decay, "robust weight decay"),
        bind("lr_milestones", &R::lr_milestones, "fractions of rob_epochs where the lr decays"),
        bind("lr_decay", &R::lr_decay, "lr decay factor"),
        bind("ce_on_adversarial", &R::ce_on_adversarial, "apply the CE term to x' instead of x"),
        bind("val_limit", &R::val_limit, "validate on at most this many examples (0: all)"),
        bind("eval_steps", &R::eval_steps, "evaluation PGD steps"),
        bind("eval_restarts", &R::eval_restarts, "restarts of the RA-strong attack"),
        bind("eval_limit", &R::eval_limit, "evaluate on at most this many test examples (0: all)"),
        bind("sweep_lambdas", &R::sweep_lambdas, "lambda values of sweep-lambda"),
        bind("sweep_pl_noise", &R::sweep_pl_noise, "pseudo-label error rate imposed in sweep-lambda"),
        bind("seeds", &R::seeds, "seeds averaged by ablate and sweep-lambda"),
    };
    return fields;
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : config_fields()) j[f.key] = f.get(c);
    return j;
}

inline void validate(const RunConfig& c) {
    auto check = [](bool ok, const char* key, const std::string& what) {
        if (!ok) fail(ErrorKind::config, detail::field_error(key, what));
    };
    check(c.label_fraction > 0.0 && c.label_fraction <= 1.0, "label_fraction", "must lie in (0, 1]");
    check(c.val_fraction >= 0.0 && c.val_fraction < 1.0, "val_fraction", "must lie in [0, 1)");
    check(c.synth_classes >= 2, "synth_classes", "must be >= 2");
    check(c.synth_modes_per_class >= 1, "synth_modes_per_class", "must be >= 1");
    check(c.synth_blobs_per_class >= 1, "synth_blobs_per_class", "must be >= 1");
    check(c.synth_examples_per_class >= 1, "synth_examples_per_class", "must be >= 1");
    check(c.synth_test_examples_per_class >= 1, "synth_test_examples_per_class", "must be >= 1");
    check(c.synth_channels >= 1 && c.synth_height >= 4 && c.synth_width >= 4, "synth_height",
          "images must be at least 1x4x4");
    check(c.aug_padding >= 0, "aug_padding", "must be >= 0");
    check(c.aug_flip >= 0.0 && c.aug_flip <= 1.0, "aug_flip", "must lie in [0, 1]");
    check(c.generator_algo == "fixmatch" || c.generator_algo == "supervised", "generator_algo",
          "must be \"fixmatch\" or \"supervised\"");
    check(c.tau >= 0.0 && c.tau <= 1.0, "tau", "must lie in [0, 1]");
    check(c.mu >= 0, "mu", "must be >= 0");
    check(c.gen_batch_size >= 1, "gen_batch_size", "must be >= 1");
    check(c.gen_lr > 0.0, "gen_lr", "must be > 0");
    check(c.gen_epochs >= 0, "gen_epochs", "must be >= 0");
    check(c.gen_steps_per_epoch >= 0, "gen_steps_per_epoch", "must be >= 0");
    check(c.lambda >= 0.0 && c.lambda <= 1.0, "lambda", "must lie in [0, 1]");
    check(c.nar_mode == "sample" || c.nar_mode == "argmax", "nar_mode", "must be \"sample\" or \"argmax\"");
    check(c.ord_period >= 1, "ord_period", "must be >= 1");
    check(c.ord_gen_epochs_per_robust_epoch >= 1, "ord_gen_epochs_per_robust_epoch", "must be >= 1");
    check(c.objective == "snord" || c.objective == "hard_label", "objective", "must be \"snord\" or \"hard_label\"");
    check(c.beta >= 0.0, "beta", "must be >= 0");
    check(c.epsilon >= 0.0, "epsilon", "must be >= 0");
    check(c.step_size > 0.0, "step_size", "must be > 0");
    check(c.attack_steps >= 0, "attack_steps", "must be >= 0");
    check(c.rob_epochs >= 1, "rob_epochs", "must be >= 1");
    check(c.rob_batch_size >= 1, "rob_batch_size", "must be >= 1");
    check(c.rob_lr > 0.0, "rob_lr", "must be > 0");
    for (std::size_t i = 0; i < c.lr_milestones.size(); ++i)
        check(c.lr_milestones[i] >= 0.0 && c.lr_milestones[i] <= 1.0, "lr_milestones",
              "entry " + std::to_string(i) + " must lie in [0, 1]");
    check(c.val_limit >= 0 && c.eval_limit >= 0, "val_limit", "must be >= 0");
    check(c.eval_steps >= 1, "eval_steps", "must be >= 1");
    check(c.eval_restarts >= 1, "eval_restarts", "must be >= 1");
    for (double l : c.sweep_lambdas) check(l >= 0.0 && l <= 1.0, "sweep_lambdas", "entries must lie in [0, 1]");
    check(c.sweep_pl_noise >= 0.0 && c.sweep_pl_noise < 1.0, "sweep_pl_noise", "must lie in [0, 1)");
    check(!c.seeds.empty(), "seeds", "must not be empty");
    for (double s : c.seeds) check(s >= 0.0 && s == std::floor(s), "seeds", "entries must be non-negative integers");
    if (!c.generator_arch.empty()) {
        try {
            parse_architecture(c.generator_arch);
        } catch (const Error& e) {
            fail(ErrorKind::config, detail::field_error("generator_arch", e.what()));
        }
    }
    if (!c.robust_arch.empty()) {
        try {
            parse_architecture(c.robust_arch);
        } catch (const Error& e) {
            fail(ErrorKind::config, detail::field_error("robust_arch", e.what()));
        }
    }
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are errors.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::config, "config: top level must be an object");
    const auto& fields = config_fields();
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto f = std::find_if(fields.begin(), fields.end(), [&](const auto& x) { return x.key == it.key(); });
        if (f == fields.end()) fail(ErrorKind::config, detail::field_error(it.key(), "unknown key"));
        f->set(c, it.value());
    }
}

inline std::string env_name(const std::string& key) {
    std::string s = "SNORD_";
    for (char ch : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
}

/// SNORD_<KEY> environment variables override file values. A value is read
/// as JSON when it parses, otherwise as a plain string.
inline void apply_env(RunConfig& c, const std::function<const char*(const char*)>& getenv_fn = [](const char* k) {
    return std::getenv(k);
}) {
    for (const auto& f : config_fields()) {
        const char* v = getenv_fn(env_name(f.key).c_str());
        if (!v) continue;
        auto parsed = nlohmann::json::parse(v, nullptr, false);
        if (parsed.is_discarded()) parsed = std::string(v);
        try {
            f.set(c, parsed);
        } catch (const Error& e) {
            fail(ErrorKind::config, std::string(e.what()) + " (from " + env_name(f.key) + ")");
        }
    }
}

inline RunConfig parse_config(const std::string& text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::config, "config: not valid JSON");
    RunConfig c;
    apply_json(c, j);
    return c;
}

/// File, then environment overrides, then validation.
inline RunConfig load_config(const std::string& path, bool with_env = true) {
    std::string text;
    try {
        text = read_file_bytes(path);
    } catch (const Error& e) {
        fail(ErrorKind::config, std::string("config: ") + e.what());
    }
    auto c = parse_config(text);
    if (with_env) apply_env(c);
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Mapping onto the module configurations

inline SyntheticSpec synthetic_spec(const RunConfig& c) {
    SyntheticSpec s;
    s.num_classes = c.synth_classes;
    s.examples_per_class = c.synth_examples_per_class;
    s.shape = {c.synth_channels, c.synth_height, c.synth_width};
    s.blobs_per_class = c.synth_blobs_per_class;
    s.modes_per_class = c.synth_modes_per_class;
    s.center_jitter = c.synth_center_jitter;
    s.noise_std = c.synth_noise_std;
    s.distractor_amplitude = c.synth_distractor;
    s.seed = c.seed;
    return s;
}

inline std::string generator_architecture(const RunConfig& c, int num_classes) {
    return c.generator_arch.empty() ? default_architecture(num_classes) : c.generator_arch;
}
inline std::string robust_architecture(const RunConfig& c, int num_classes) {
    return c.robust_arch.empty() ? default_architecture(num_classes) : c.robust_arch;
}

/// Generator epochs run after robust training starts.
inline int ord_generator_epochs(const RunConfig& c) {
    return c.ord_enabled ? c.rob_epochs * c.ord_gen_epochs_per_robust_epoch : 0;
}

/// The cosine schedule spans pre-training plus the co-training budget of the
/// ORD-enabled configuration, whether or not ORD is used, so every arm of an
/// experiment starts from the same generator.
inline SSLTrainerConfig generator_config(const RunConfig& c) {
    SSLTrainerConfig g;
    g.tau = c.tau;
    g.mu = c.mu;
    g.batch_size = c.gen_batch_size;
    g.lr = c.gen_lr;
    g.momentum = c.gen_momentum;
    g.nesterov = c.gen_nesterov;
    g.weight_decay = c.gen_weight_decay;
    g.total_epochs = c.gen_epochs + c.rob_epochs * c.ord_gen_epochs_per_robust_epoch;
    g.steps_per_epoch = c.gen_steps_per_epoch;
    g.unsup_weight = c.unsup_weight;
    g.seed = derive_seed(c.seed, {101});
    g.weak = AugmentationPolicy::weak(derive_seed(c.seed, {102}), c.aug_padding, c.aug_flip);
    g.strong = AugmentationPolicy::strong(derive_seed(c.seed, {103}), c.aug_padding, c.aug_flip);
    return g;
}

inline NARConfig nar_config(const RunConfig& c) {
    NARConfig n;
    n.lambda = c.lambda;
    n.unlabeled_mode = c.nar_mode == "argmax" ? UnlabeledMode::argmax : UnlabeledMode::sample;
    n.resample_per_epoch = c.nar_resample_per_epoch;
    n.seed = derive_seed(c.seed, {104});
    return n;
}

inline ORDSchedule ord_schedule(const RunConfig& c) {
    return {c.ord_period, c.ord_gen_epochs_per_robust_epoch, c.ord_enabled};
}

inline RobustTrainConfig robust_config(const RunConfig& c) {
    RobustTrainConfig r;
    r.beta = c.beta;
    r.train_attack = AttackSpec::training(c.epsilon, c.step_size, c.attack_steps);
    r.eval_attack = AttackSpec{c.epsilon, c.epsilon / 4.0, c.eval_steps, 1, AttackObjective::ce_to_target, true};
    r.total_epochs = c.rob_epochs;
    r.batch_size = c.rob_batch_size;
    r.lr = c.rob_lr;
    r.momentum = c.rob_momentum;
    r.weight_decay = c.rob_weight_decay;
    r.lr_milestones = c.lr_milestones;
    r.lr_decay = c.lr_decay;
    r.ce_on_adversarial = c.ce_on_adversarial;
    r.use_nar = c.use_nar;
    r.objective = c.objective == "hard_label" ? RobustObjective::hard_label : RobustObjective::snord;
    r.val_limit = static_cast<std::size_t>(c.val_limit);
    r.seed = derive_seed(c.seed, {105});
    r.weak = AugmentationPolicy::weak(derive_seed(c.seed, {106}), c.aug_padding, c.aug_flip);
    return r;
}

inline EvalSpecs eval_specs(const RunConfig& c) {
    EvalSpecs e;
    e.pgd = AttackSpec{c.epsilon, c.epsilon / 4.0, c.eval_steps, 1, AttackObjective::ce_to_target, true};
    e.strong = AttackSpec{c.epsilon, c.epsilon / 4.0, c.eval_steps, c.eval_restarts, AttackObjective::ce_to_target, true};
    e.seed = derive_seed(c.seed, {107});
    return e;
}

}  // namespace snord
