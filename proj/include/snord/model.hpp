#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "snord/common.hpp"
#include "snord/data.hpp"

namespace snord {

// ---------------------------------------------------------------------------
// Label distributions and losses

/// Probabilities are floored at this value inside every log.
inline constexpr double kProbFloor = 1e-12;

struct LabelDistribution {
    std::vector<double> probs;

    LabelDistribution() = default;
    explicit LabelDistribution(std::vector<double> p) : probs(std::move(p)) {}

    static LabelDistribution one_hot(int num_classes, int k) {
        require(k >= 0 && k < num_classes, "one_hot: class out of range");
        std::vector<double> p(static_cast<std::size_t>(num_classes), 0.0);
        p[static_cast<std::size_t>(k)] = 1.0;
        return LabelDistribution(std::move(p));
    }
    static LabelDistribution uniform(int num_classes) {
        return LabelDistribution(std::vector<double>(static_cast<std::size_t>(num_classes), 1.0 / num_classes));
    }

    std::size_t size() const noexcept { return probs.size(); }
    double operator[](std::size_t i) const { return probs[i]; }

    bool valid(double tol = 1e-6) const {
        if (probs.empty()) return false;
        double s = 0.0;
        for (double v : probs) {
            if (!(v >= 0.0) || !std::isfinite(v)) return false;
            s += v;
        }
        return std::abs(s - 1.0) <= tol;
    }
    friend bool operator==(const LabelDistribution&, const LabelDistribution&) = default;
};

/// Index of the largest entry; ties resolve to the lowest index.
template <class T>
int argmax(std::span<const T> v) {
    require(!v.empty(), "argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return static_cast<int>(best);
}
inline int argmax(const LabelDistribution& p) { return argmax(std::span<const double>(p.probs)); }

template <class T>
LabelDistribution softmax(std::span<const T> logits) {
    require(!logits.empty(), "softmax of empty logits");
    double m = -std::numeric_limits<double>::infinity();
    for (T z : logits) {
        if (!std::isfinite(static_cast<double>(z))) fail(ErrorKind::invalid_argument, "softmax: non-finite logit");
        m = std::max(m, static_cast<double>(z));
    }
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(static_cast<double>(logits[i]) - m));
    for (auto& v : p) v /= s;
    return LabelDistribution(std::move(p));
}
template <class T>
LabelDistribution softmax(const std::vector<T>& logits) {
    return softmax(std::span<const T>(logits));
}

/// −Σ target_i · log(pred_i), with pred floored at kProbFloor.
inline double cross_entropy(const LabelDistribution& pred, const LabelDistribution& target) {
    require(pred.size() == target.size(), "cross_entropy: size mismatch");
    double l = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (target[i] != 0.0) l -= target[i] * std::log(std::max(pred[i], kProbFloor));
    return l;
}

template <class T>
double cross_entropy_logits(std::span<const T> logits, const LabelDistribution& target) {
    return cross_entropy(softmax(logits), target);
}

/// KL(p ‖ q) = Σ p_i log(p_i / q_i), both arguments floored at kProbFloor.
inline double kl_divergence(const LabelDistribution& p, const LabelDistribution& q) {
    require(p.size() == q.size(), "kl_divergence: size mismatch");
    double l = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!std::isfinite(p[i]) || !std::isfinite(q[i])) fail(ErrorKind::invalid_argument, "kl_divergence: non-finite");
        if (p[i] > 0.0) l += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor)));
    }
    return std::max(l, 0.0);
}

/// d CE(softmax(z), t) / dz = softmax(z) · Σt − t.
inline std::vector<double> cross_entropy_logit_grad(const LabelDistribution& pred, const LabelDistribution& target) {
    double ts = 0.0;
    for (double v : target.probs) ts += v;
    std::vector<double> g(pred.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = pred[i] * ts - target[i];
    return g;
}

/// d KL(p ‖ softmax(z)) / dz with p held fixed = softmax(z) − p.
inline std::vector<double> kl_second_arg_logit_grad(const LabelDistribution& p, const LabelDistribution& q) {
    std::vector<double> g(q.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = q[i] - p[i];
    return g;
}

/// d KL(softmax(z) ‖ q) / dz with q held fixed.
inline std::vector<double> kl_first_arg_logit_grad(const LabelDistribution& p, const LabelDistribution& q) {
    std::vector<double> r(p.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        r[i] = std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor));
        mean += p[i] * r[i];
    }
    for (std::size_t i = 0; i < p.size(); ++i) r[i] = p[i] * (r[i] - mean);
    return r;
}

// ---------------------------------------------------------------------------
// Architecture descriptors
//
// Comma-separated layer tokens:
//   conv:<out>:<kernel>:<stride>:<padding>   relu   avgpool:<k>
//   dropout:<p>   linear:<out>
// The last layer must be linear with out = number of classes.

enum class LayerKind { conv, relu, avgpool, dropout, linear };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    double rate = 0.0;
};

inline std::vector<LayerSpec> parse_architecture(std::string_view text) {
    std::vector<LayerSpec> layers;
    std::string s(text);
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::vector<std::string> f;
        std::stringstream ts(tok);
        std::string part;
        while (std::getline(ts, part, ':')) f.push_back(part);
        if (f.empty()) continue;
        LayerSpec l;
        try {
            if (f[0] == "conv" && f.size() == 5) {
                l.kind = LayerKind::conv;
                l.out = std::stoi(f[1]);
                l.kernel = std::stoi(f[2]);
                l.stride = std::stoi(f[3]);
                l.padding = std::stoi(f[4]);
            } else if (f[0] == "relu" && f.size() == 1) {
                l.kind = LayerKind::relu;
            } else if (f[0] == "avgpool" && f.size() == 2) {
                l.kind = LayerKind::avgpool;
                l.kernel = std::stoi(f[1]);
            } else if (f[0] == "dropout" && f.size() == 2) {
                l.kind = LayerKind::dropout;
                l.rate = std::stod(f[1]);
            } else if (f[0] == "linear" && f.size() == 2) {
                l.kind = LayerKind::linear;
                l.out = std::stoi(f[1]);
            } else {
                fail(ErrorKind::invalid_argument, "architecture: bad layer token '" + tok + "'");
            }
        } catch (const std::logic_error&) {
            fail(ErrorKind::invalid_argument, "architecture: bad number in '" + tok + "'");
        }
        layers.push_back(l);
    }
    require(!layers.empty(), "architecture: no layers");
    return layers;
}

inline std::string format_architecture(std::span<const LayerSpec> layers) {
    std::ostringstream out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (i) out << ',';
        switch (l.kind) {
        case LayerKind::conv: out << "conv:" << l.out << ':' << l.kernel << ':' << l.stride << ':' << l.padding; break;
        case LayerKind::relu: out << "relu"; break;
        case LayerKind::avgpool: out << "avgpool:" << l.kernel; break;
        case LayerKind::dropout: out << "dropout:" << l.rate; break;
        case LayerKind::linear: out << "linear:" << l.out; break;
        }
    }
    return out.str();
}

/// Reference backbone: two conv blocks and a linear head.
inline std::string default_architecture(int num_classes) {
    return "conv:8:3:1:1,relu,avgpool:2,conv:16:3:1:1,relu,avgpool:2,linear:" + std::to_string(num_classes);
}

// ---------------------------------------------------------------------------
// Classifier

enum class Mode { train, eval };

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Keys dropout masks in train mode.
    std::uint64_t dropout_seed = 0;
};

template <class T>
class Classifier {
public:
    using value_type = T;

    /// Activations recorded by a forward pass, consumed by backward().
    struct Tape {
        std::vector<std::vector<T>> acts;   // acts[l] = input of layer l; acts.back() = logits
        std::vector<std::vector<T>> masks;  // dropout scale per element, empty for other layers
    };

    Classifier() = default;

    Classifier(Shape input, int num_classes, std::vector<LayerSpec> layers)
        : input_(input), num_classes_(num_classes), layers_(std::move(layers)) {
        build();
    }

    Classifier(Shape input, int num_classes, std::string_view architecture)
        : Classifier(input, num_classes, parse_architecture(architecture)) {}

    const Shape& input_shape() const noexcept { return input_; }
    int num_classes() const noexcept { return num_classes_; }
    std::string architecture() const { return format_architecture(layers_); }
    std::span<const LayerSpec> layers() const noexcept { return layers_; }

    std::size_t num_params() const noexcept { return params_.size(); }
    std::span<T> parameters() noexcept { return params_; }
    std::span<const T> parameters() const noexcept { return params_; }

    Mode mode() const noexcept { return mode_; }
    void set_mode(Mode m) noexcept { mode_ = m; }

    std::uint64_t parameter_hash() const {
        Fnv1a h;
        h.update_span(std::span<const T>(params_));
        return h.digest();
    }

    /// Kaiming-normal weights, zero biases.
    void init(std::uint64_t seed) {
        auto rng = make_rng(seed, Stream::init);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& g = geom_[l];
            if (g.weight_count == 0) continue;
            std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(g.fan_in)));
            for (std::size_t k = 0; k < g.weight_count; ++k) params_[g.param_offset + k] = static_cast<T>(n(rng));
            for (std::size_t k = 0; k < g.bias_count; ++k) params_[g.param_offset + g.weight_count + k] = T(0);
        }
    }

    /// Logits for one input; uses the model's mode unless `opts` is given.
    std::vector<T> forward(std::span<const T> x) const {
        Tape tape;
        return forward(x, tape, ForwardOptions{mode_, 0});
    }
    std::vector<T> forward(std::span<const T> x, ForwardOptions opts) const {
        Tape tape;
        return forward(x, tape, opts);
    }

    std::vector<T> forward(std::span<const T> x, Tape& tape, ForwardOptions opts) const {
        if (x.size() != input_.size()) fail(ErrorKind::invalid_argument, "forward: input shape mismatch");
        tape.acts.resize(layers_.size() + 1);
        tape.masks.resize(layers_.size());
        tape.acts[0].assign(x.begin(), x.end());
        for (std::size_t l = 0; l < layers_.size(); ++l)
            forward_layer(l, tape.acts[l], tape.acts[l + 1], tape.masks[l], opts);
        return tape.acts.back();
    }

    /// Back-propagates d(loss)/d(logits). Writes d/d(input) into `dinput` when
    /// non-empty and accumulates d/d(params) into `dparams` when non-empty.
    void backward(const Tape& tape, std::span<const T> dlogits, std::span<T> dinput, std::span<T> dparams) const {
        require(dlogits.size() == static_cast<std::size_t>(num_classes_), "backward: dlogits size");
        require(dparams.empty() || dparams.size() == params_.size(), "backward: dparams size");
        require(dinput.empty() || dinput.size() == input_.size(), "backward: dinput size");
        std::vector<T> grad(dlogits.begin(), dlogits.end());
        std::vector<T> next;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const bool need_input_grad = l > 0 || !dinput.empty();
            backward_layer(l, tape.acts[l], tape.acts[l + 1], tape.masks[l], grad, next, dparams, need_input_grad);
            if (!need_input_grad) break;
            grad.swap(next);
        }
        if (!dinput.empty()) std::copy(grad.begin(), grad.end(), dinput.begin());
    }

private:
    struct Geometry {
        Shape in{}, out{};
        std::size_t param_offset = 0, weight_count = 0, bias_count = 0, fan_in = 0;
    };

    void build() {
        require(input_.size() > 0, "classifier: empty input shape");
        Shape cur = input_;
        std::size_t offset = 0;
        geom_.clear();
        for (const auto& l : layers_) {
            Geometry g;
            g.in = cur;
            g.param_offset = offset;
            switch (l.kind) {
            case LayerKind::conv: {
                require(l.out > 0 && l.kernel > 0 && l.stride > 0 && l.padding >= 0, "conv: bad parameters");
                const int oh = (cur.height + 2 * l.padding - l.kernel) / l.stride + 1;
                const int ow = (cur.width + 2 * l.padding - l.kernel) / l.stride + 1;
                require(oh > 0 && ow > 0, "conv: output would be empty");
                g.out = {l.out, oh, ow};
                g.fan_in = static_cast<std::size_t>(cur.channels) * l.kernel * l.kernel;
                g.weight_count = static_cast<std::size_t>(l.out) * g.fan_in;
                g.bias_count = static_cast<std::size_t>(l.out);
                break;
            }
            case LayerKind::relu:
            case LayerKind::dropout:
                require(l.kind != LayerKind::dropout || (l.rate >= 0.0 && l.rate < 1.0), "dropout: rate in [0,1)");
                g.out = cur;
                break;
            case LayerKind::avgpool:
                require(l.kernel > 0 && cur.height / l.kernel > 0 && cur.width / l.kernel > 0, "avgpool: bad kernel");
                g.out = {cur.channels, cur.height / l.kernel, cur.width / l.kernel};
                break;
            case LayerKind::linear:
                require(l.out > 0, "linear: bad width");
                g.out = {l.out, 1, 1};
                g.fan_in = cur.size();
                g.weight_count = static_cast<std::size_t>(l.out) * cur.size();
                g.bias_count = static_cast<std::size_t>(l.out);
                break;
            }
            offset += g.weight_count + g.bias_count;
            geom_.push_back(g);
            cur = g.out;
        }
        require(layers_.back().kind == LayerKind::linear, "classifier: last layer must be linear");
        require(cur.size() == static_cast<std::size_t>(num_classes_), "classifier: head width must equal class count");
        params_.assign(offset, T(0));
    }

    // Range of output coordinates o with 0 <= o*stride + k - pad < n.
    static std::pair<int, int> valid_range(int k, int pad, int stride, int n, int out_n) {
        int lo = 0;
        while (lo < out_n && lo * stride + k - pad < 0) ++lo;
        int hi = out_n;
        while (hi > lo && (hi - 1) * stride + k - pad >= n) --hi;
        return {lo, hi};
    }

    void forward_layer(std::size_t l, const std::vector<T>& in, std::vector<T>& out, std::vector<T>& mask,
                       const ForwardOptions& opts) const {
        const auto& L = layers_[l];
        const auto& g = geom_[l];
        out.assign(g.out.size(), T(0));
        switch (L.kind) {
        case LayerKind::conv: {
            const T* w = params_.data() + g.param_offset;
            const T* b = w + g.weight_count;
            const int IH = g.in.height, IW = g.in.width, OH = g.out.height, OW = g.out.width, K = L.kernel;
            for (int oc = 0; oc < g.out.channels; ++oc) {
                T* o = out.data() + static_cast<std::size_t>(oc) * OH * OW;
                std::fill(o, o + OH * OW, b[oc]);
                for (int ic = 0; ic < g.in.channels; ++ic) {
                    const T* src = in.data() + static_cast<std::size_t>(ic) * IH * IW;
                    for (int ky = 0; ky < K; ++ky) {
                        const auto [oy0, oy1] = valid_range(ky, L.padding, L.stride, IH, OH);
                        for (int kx = 0; kx < K; ++kx) {
                            const auto [ox0, ox1] = valid_range(kx, L.padding, L.stride, IW, OW);
                            const T wv = w[((static_cast<std::size_t>(oc) * g.in.channels + ic) * K + ky) * K + kx];
                            for (int oy = oy0; oy < oy1; ++oy) {
                                const T* srow = src + (oy * L.stride + ky - L.padding) * IW + (kx - L.padding);
                                T* orow = o + oy * OW;
                                for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * srow[ox * L.stride];
                            }
                        }
                    }
                }
            }
            break;
        }
        case LayerKind::relu:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
            break;
        case LayerKind::dropout:
            if (opts.mode == Mode::train && L.rate > 0.0) {
                auto rng = make_rng(opts.dropout_seed, Stream::dropout, {l});
                const T keep = T(1.0 / (1.0 - L.rate));
                mask.resize(in.size());
                for (std::size_t i = 0; i < in.size(); ++i) {
                    mask[i] = uniform01(rng) < L.rate ? T(0) : keep;
                    out[i] = in[i] * mask[i];
                }
            } else {
                mask.clear();
                std::copy(in.begin(), in.end(), out.begin());
            }
            break;
        case LayerKind::avgpool: {
            const int K = L.kernel, IH = g.in.height, IW = g.in.width, OH = g.out.height, OW = g.out.width;
            const T scale = T(1) / T(K * K);
            for (int c = 0; c < g.out.channels; ++c)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        T s = T(0);
                        for (int dy = 0; dy < K; ++dy)
                            for (int dx = 0; dx < K; ++dx)
                                s += in[(static_cast<std::size_t>(c) * IH + oy * K + dy) * IW + ox * K + dx];
                        out[(static_cast<std::size_t>(c) * OH + oy) * OW + ox] = s * scale;
                    }
            break;
        }
        case LayerKind::linear: {
            const T* w = params_.data() + g.param_offset;
            const T* b = w + g.weight_count;
            const std::size_t n_in = in.size();
            for (int o = 0; o < L.out; ++o) {
                const T* row = w + static_cast<std::size_t>(o) * n_in;
                T s = b[o];
                for (std::size_t i = 0; i < n_in; ++i) s += row[i] * in[i];
                out[static_cast<std::size_t>(o)] = s;
            }
            break;
        }
        }
    }

    void backward_layer(std::size_t l, const std::vector<T>& in, const std::vector<T>& out, const std::vector<T>& mask,
                        const std::vector<T>& dout, std::vector<T>& din, std::span<T> dparams,
                        bool need_input_grad) const {
        const auto& L = layers_[l];
        const auto& g = geom_[l];
        din.assign(need_input_grad ? g.in.size() : 0, T(0));
        switch (L.kind) {
        case LayerKind::conv: {
            const T* w = params_.data() + g.param_offset;
            T* dw = dparams.empty() ? nullptr : dparams.data() + g.param_offset;
            T* db = dw ? dw + g.weight_count : nullptr;
            const int IH = g.in.height, IW = g.in.width, OH = g.out.height, OW = g.out.width, K = L.kernel;
            for (int oc = 0; oc < g.out.channels; ++oc) {
                const T* go = dout.data() + static_cast<std::size_t>(oc) * OH * OW;
                if (db) {
                    T s = T(0);
                    for (int k = 0; k < OH * OW; ++k) s += go[k];
                    db[oc] += s;
                }
                for (int ic = 0; ic < g.in.channels; ++ic) {
                    const T* src = in.data() + static_cast<std::size_t>(ic) * IH * IW;
                    T* dsrc = need_input_grad ? din.data() + static_cast<std::size_t>(ic) * IH * IW : nullptr;
                    for (int ky = 0; ky < K; ++ky) {
                        const auto [oy0, oy1] = valid_range(ky, L.padding, L.stride, IH, OH);
                        for (int kx = 0; kx < K; ++kx) {
                            const auto [ox0, ox1] = valid_range(kx, L.padding, L.stride, IW, OW);
                            const std::size_t wi = ((static_cast<std::size_t>(oc) * g.in.channels + ic) * K + ky) * K + kx;
                            const T wv = w[wi];
                            T acc = T(0);
                            for (int oy = oy0; oy < oy1; ++oy) {
                                const int row = (oy * L.stride + ky - L.padding) * IW + (kx - L.padding);
                                const T* grow = go + oy * OW;
                                if (dw) {
                                    const T* srow = src + row;
                                    for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * srow[ox * L.stride];
                                }
                                if (dsrc) {
                                    T* drow = dsrc + row;
                                    for (int ox = ox0; ox < ox1; ++ox) drow[ox * L.stride] += wv * grow[ox];
                                }
                            }
                            if (dw) dw[wi] += acc;
                        }
                    }
                }
            }
            break;
        }
        case LayerKind::relu:
            if (need_input_grad)
                for (std::size_t i = 0; i < in.size(); ++i) din[i] = out[i] > T(0) ? dout[i] : T(0);
            break;
        case LayerKind::dropout:
            if (need_input_grad) {
                if (mask.empty())
                    std::copy(dout.begin(), dout.end(), din.begin());
                else
                    for (std::size_t i = 0; i < din.size(); ++i) din[i] = dout[i] * mask[i];
            }
            break;
        case LayerKind::avgpool: {
            if (!need_input_grad) break;
            const int K = L.kernel, IH = g.in.height, IW = g.in.width, OH = g.out.height, OW = g.out.width;
            const T scale = T(1) / T(K * K);
            for (int c = 0; c < g.out.channels; ++c)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const T v = dout[(static_cast<std::size_t>(c) * OH + oy) * OW + ox] * scale;
                        for (int dy = 0; dy < K; ++dy)
                            for (int dx = 0; dx < K; ++dx)
                                din[(static_cast<std::size_t>(c) * IH + oy * K + dy) * IW + ox * K + dx] = v;
                    }
            break;
        }
        case LayerKind::linear: {
            const T* w = params_.data() + g.param_offset;
            T* dw = dparams.empty() ? nullptr : dparams.data() + g.param_offset;
            T* db = dw ? dw + g.weight_count : nullptr;
            const std::size_t n_in = in.size();
            for (int o = 0; o < L.out; ++o) {
                const T go = dout[static_cast<std::size_t>(o)];
                const T* row = w + static_cast<std::size_t>(o) * n_in;
                if (need_input_grad)
                    for (std::size_t i = 0; i < n_in; ++i) din[i] += row[i] * go;
                if (dw) {
                    T* drow = dw + static_cast<std::size_t>(o) * n_in;
                    for (std::size_t i = 0; i < n_in; ++i) drow[i] += go * in[i];
                    db[o] += go;
                }
            }
            break;
        }
        }
    }

    Shape input_{};
    int num_classes_ = 0;
    std::vector<LayerSpec> layers_;
    std::vector<Geometry> geom_;
    std::vector<T> params_;
    Mode mode_ = Mode::eval;
};

template <class T>
std::vector<T> to_scalar(std::span<const float> x) {
    return std::vector<T>(x.begin(), x.end());
}

// ---------------------------------------------------------------------------
// Input gradients

enum class LossKind { ce_to_target, kl_to_reference };

/// CE(softmax(f(x)), target) or KL(reference ‖ softmax(f(x))).
struct LossSpec {
    LossKind kind = LossKind::ce_to_target;
    LabelDistribution distribution;
};

template <class T>
struct InputGradient {
    double loss = 0.0;
    std::vector<T> grad;
};

template <class T>
double evaluate_loss(const LossSpec& spec, std::span<const T> logits) {
    const auto q = softmax(logits);
    return spec.kind == LossKind::ce_to_target ? cross_entropy(q, spec.distribution) : kl_divergence(spec.distribution, q);
}

/// Gradient of the scalar loss with respect to the input, in eval mode.
/// Parameters are never touched.
template <class T>
InputGradient<T> input_gradient(const Classifier<T>& model, std::span<const T> x, const LossSpec& spec) {
    typename Classifier<T>::Tape tape;
    const auto logits = model.forward(x, tape, ForwardOptions{Mode::eval, 0});
    const auto q = softmax(std::span<const T>(logits));
    InputGradient<T> out;
    std::vector<double> dz;
    if (spec.kind == LossKind::ce_to_target) {
        out.loss = cross_entropy(q, spec.distribution);
        dz = cross_entropy_logit_grad(q, spec.distribution);
    } else {
        out.loss = kl_divergence(spec.distribution, q);
        dz = kl_second_arg_logit_grad(spec.distribution, q);
    }
    if (!std::isfinite(out.loss)) fail(ErrorKind::divergence, "input_gradient: non-finite loss");
    std::vector<T> dzt(dz.begin(), dz.end());
    out.grad.assign(x.size(), T(0));
    model.backward(tape, dzt, out.grad, {});
    return out;
}

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay (PyTorch semantics)

struct SgdConfig {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = false;
};

template <class T>
struct SgdState {
    std::vector<T> velocity;
};

template <class T>
void parameter_step(Classifier<T>& model, std::span<const T> grad, double loss, double lr, const SgdConfig& cfg,
                    SgdState<T>& state) {
    if (!std::isfinite(loss)) fail(ErrorKind::divergence, "parameter_step: non-finite loss");
    auto params = model.parameters();
    require(grad.size() == params.size(), "parameter_step: gradient size mismatch");
    if (state.velocity.size() != params.size()) state.velocity.assign(params.size(), T(0));
    const T m = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay), eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        T g = grad[i] + wd * params[i];
        state.velocity[i] = m * state.velocity[i] + g;
        const T step = cfg.nesterov ? g + m * state.velocity[i] : state.velocity[i];
        params[i] -= eta * step;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary container, version 1:
//   "SNORDCKP"  u32 version  u32 header_len  header (JSON, UTF-8)
//   params      num_params values of the header's dtype
//   velocity    num_params values when header.has_velocity, else nothing
// The JSON header holds arch, input_shape, num_classes, dtype, num_params,
// has_velocity and a free-form "meta" object (epoch, step, seed, ...).

template <class T>
struct Checkpoint {
    Classifier<T> model;
    SgdState<T> optimizer;
    nlohmann::json meta = nlohmann::json::object();
};

template <class T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>)
        return "f32";
    else
        return "f64";
}

template <class T>
std::string encode_checkpoint(const Classifier<T>& model, const SgdState<T>& opt, const nlohmann::json& meta) {
    const bool has_velocity = opt.velocity.size() == model.num_params();
    nlohmann::json header = {{"arch", model.architecture()},
                             {"input_shape",
                              {model.input_shape().channels, model.input_shape().height, model.input_shape().width}},
                             {"num_classes", model.num_classes()},
                             {"dtype", dtype_name<T>()},
                             {"num_params", model.num_params()},
                             {"has_velocity", has_velocity},
                             {"meta", meta}};
    const std::string h = header.dump();
    detail::ByteWriter w;
    w.put_bytes("SNORDCKP");
    w.put(std::uint32_t{1});
    w.put(static_cast<std::uint32_t>(h.size()));
    w.put_bytes(h);
    w.put_span(model.parameters());
    if (has_velocity) w.put_span(std::span<const T>(opt.velocity));
    return w.bytes();
}

template <class T>
Checkpoint<T> decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    if (r.get_bytes(8) != "SNORDCKP") fail(ErrorKind::io, "checkpoint: bad magic");
    if (r.get<std::uint32_t>() != 1) fail(ErrorKind::io, "checkpoint: unsupported version");
    const auto hlen = r.get<std::uint32_t>();
    const auto header = nlohmann::json::parse(r.get_bytes(hlen));
    if (header.at("dtype").get<std::string>() != dtype_name<T>()) fail(ErrorKind::io, "checkpoint: dtype mismatch");
    const auto dims = header.at("input_shape").get<std::vector<int>>();
    Checkpoint<T> ck;
    ck.model = Classifier<T>(Shape{dims.at(0), dims.at(1), dims.at(2)}, header.at("num_classes").get<int>(),
                             header.at("arch").get<std::string>());
    const auto n = header.at("num_params").get<std::size_t>();
    if (n != ck.model.num_params()) fail(ErrorKind::io, "checkpoint: parameter count mismatch");
    const auto params = r.get_vector<T>(n);
    std::copy(params.begin(), params.end(), ck.model.parameters().begin());
    if (header.at("has_velocity").get<bool>()) ck.optimizer.velocity = r.get_vector<T>(n);
    if (!r.at_end()) fail(ErrorKind::io, "checkpoint: trailing bytes");
    ck.meta = header.value("meta", nlohmann::json::object());
    return ck;
}

template <class T>
void save_checkpoint(const std::string& path, const Classifier<T>& model, const SgdState<T>& opt,
                     const nlohmann::json& meta) {
    write_file_bytes(path, encode_checkpoint(model, opt, meta));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    return decode_checkpoint<T>(read_file_bytes(path));
}

}  // namespace snord
