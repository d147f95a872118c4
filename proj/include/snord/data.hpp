#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "snord/common.hpp"

namespace snord {

struct Shape {
    int channels = 1;
    int height = 1;
    int width = 1;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Images stored contiguously as float in [0,1], channel-major, with integer class ids.
class Dataset {
public:
    Dataset() = default;
    Dataset(Shape shape, int num_classes, std::vector<float> pixels, std::vector<int> labels)
        : shape_(shape), num_classes_(num_classes), pixels_(std::move(pixels)), labels_(std::move(labels)) {
        validate();
    }

    const Shape& shape() const noexcept { return shape_; }
    int num_classes() const noexcept { return num_classes_; }
    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }

    std::span<const float> image(std::size_t i) const {
        return {pixels_.data() + i * shape_.size(), shape_.size()};
    }
    int label(std::size_t i) const { return labels_.at(i); }
    std::span<const int> labels() const noexcept { return labels_; }
    std::span<const float> pixels() const noexcept { return pixels_; }

    /// New dataset holding the listed examples, in the given order.
    Dataset subset(std::span<const std::size_t> indices) const {
        std::vector<float> px;
        std::vector<int> lb;
        px.reserve(indices.size() * shape_.size());
        lb.reserve(indices.size());
        for (auto i : indices) {
            require(i < size(), "subset index out of range");
            auto img = image(i);
            px.insert(px.end(), img.begin(), img.end());
            lb.push_back(labels_[i]);
        }
        return Dataset(shape_, num_classes_, std::move(px), std::move(lb));
    }

private:
    void validate() const {
        require(shape_.channels > 0 && shape_.height > 0 && shape_.width > 0, "dataset: invalid shape");
        require(num_classes_ > 0, "dataset: num_classes must be positive");
        require(pixels_.size() == labels_.size() * shape_.size(), "dataset: pixel count does not match shape");
        for (float v : pixels_)
            require(v >= 0.0f && v <= 1.0f, "dataset: pixel outside [0,1]");
        for (int y : labels_)
            require(y >= 0 && y < num_classes_, "dataset: class id out of range");
    }

    Shape shape_{};
    int num_classes_ = 0;
    std::vector<float> pixels_;
    std::vector<int> labels_;
};

/// A labeled training example. The ground truth is a class id; its one-hot
/// distribution is built where a target is needed.
struct LabeledExample {
    std::span<const float> x;
    int label = 0;
    std::size_t index = 0;
};

/// Trainers only ever see x and the index of an unlabeled example.
struct UnlabeledExample {
    std::span<const float> x;
    std::size_t index = 0;
};

// ---------------------------------------------------------------------------
// SSL split

struct SSLSplit {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;
    std::vector<std::size_t> val;
    double label_fraction = 1.0;
    std::uint64_t seed = 0;

    /// Training pool = labeled ∪ unlabeled, sorted.
    std::vector<std::size_t> pool() const {
        std::vector<std::size_t> out;
        out.reserve(labeled.size() + unlabeled.size());
        std::merge(labeled.begin(), labeled.end(), unlabeled.begin(), unlabeled.end(), std::back_inserter(out));
        return out;
    }

    std::uint64_t fingerprint() const {
        Fnv1a h;
        for (const auto* set : {&labeled, &unlabeled, &val}) {
            h.update_value(static_cast<std::uint64_t>(set->size()));
            for (auto i : *set) h.update_value(static_cast<std::uint64_t>(i));
        }
        return h.digest();
    }

    friend bool operator==(const SSLSplit&, const SSLSplit&) = default;
};

struct SplitOptions {
    /// Fraction carved out for validation before labeled/unlabeled
    /// partitioning. Zero when the dataset ships an official validation set.
    double val_fraction = 0.1;
};

namespace detail {

// floor/ceil allocation of `total` items over `bins` with the `total % bins`
// extra items assigned to a seeded random subset of bins.
inline std::vector<std::size_t> balanced_quota(std::size_t total, std::size_t bins, Rng& rng) {
    std::vector<std::size_t> quota(bins, total / bins);
    std::vector<std::size_t> order(bins);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < total % bins; ++k) ++quota[order[k]];
    return quota;
}

}  // namespace detail

/// Class-balanced partition into labeled, unlabeled and validation index sets.
///
/// Validation is carved per class first (round(val_fraction * class size)).
/// The labeled budget is round(label_fraction * pool size), spread over the
/// classes as floor or ceil of budget / num_classes.
inline SSLSplit make_ssl_split(std::size_t dataset_size, int num_classes, std::span<const int> labels,
                               double label_fraction, std::uint64_t seed, SplitOptions opts = {}) {
    require(label_fraction > 0.0 && label_fraction <= 1.0, "label_fraction must lie in (0, 1]");
    require(num_classes > 0, "num_classes must be positive");
    require(labels.size() == dataset_size, "labels size does not match dataset size");
    require(opts.val_fraction >= 0.0 && opts.val_fraction < 1.0, "val_fraction must lie in [0, 1)");

    const auto C = static_cast<std::size_t>(num_classes);
    std::vector<std::vector<std::size_t>> members(C);
    for (std::size_t i = 0; i < dataset_size; ++i) {
        const int y = labels[i];
        require(y >= 0 && y < num_classes, "unknown class id " + std::to_string(y));
        members[static_cast<std::size_t>(y)].push_back(i);
    }
    for (std::size_t c = 0; c < C; ++c)
        require(!members[c].empty(), "class " + std::to_string(c) + " has no examples");

    SSLSplit split;
    split.label_fraction = label_fraction;
    split.seed = seed;

    std::vector<std::vector<std::size_t>> pool_members(C);
    for (std::size_t c = 0; c < C; ++c) {
        auto rng = make_rng(seed, Stream::split, {0, c});
        auto m = members[c];
        std::shuffle(m.begin(), m.end(), rng);
        const auto n_val = static_cast<std::size_t>(std::llround(opts.val_fraction * static_cast<double>(m.size())));
        require(n_val < m.size(), "validation carve-out empties class " + std::to_string(c));
        split.val.insert(split.val.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_val));
        pool_members[c].assign(m.begin() + static_cast<std::ptrdiff_t>(n_val), m.end());
    }

    std::size_t pool_size = 0;
    for (const auto& m : pool_members) pool_size += m.size();

    std::vector<std::size_t> quota(C);
    if (label_fraction == 1.0) {
        for (std::size_t c = 0; c < C; ++c) quota[c] = pool_members[c].size();
    } else {
        const auto budget = static_cast<std::size_t>(std::llround(label_fraction * static_cast<double>(pool_size)));
        auto rng = make_rng(seed, Stream::split, {1});
        quota = detail::balanced_quota(budget, C, rng);
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (quota[c] == 0)
            fail(ErrorKind::invalid_argument,
                 "label_fraction " + std::to_string(label_fraction) + " leaves class " + std::to_string(c) +
                     " without labeled examples");
        require(quota[c] <= pool_members[c].size(), "class " + std::to_string(c) + " too small for labeled quota");
        const auto& m = pool_members[c];
        split.labeled.insert(split.labeled.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(quota[c]));
        split.unlabeled.insert(split.unlabeled.end(), m.begin() + static_cast<std::ptrdiff_t>(quota[c]), m.end());
    }
    std::sort(split.labeled.begin(), split.labeled.end());
    std::sort(split.unlabeled.begin(), split.unlabeled.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

inline std::vector<std::size_t> per_class_counts(std::span<const std::size_t> indices, std::span<const int> labels,
                                                 int num_classes) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (auto i : indices) ++counts.at(static_cast<std::size_t>(labels[i]));
    return counts;
}

// Split file (text, version 1):
//
//   snord-split 1
//   seed <u64>
//   label_fraction <%.17g>
//   labeled <n>
//   <n indices separated by single spaces; empty line when n = 0>
//   unlabeled <n>
//   <...>
//   val <n>
//   <...>
inline std::string format_split(const SSLSplit& s) {
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", s.label_fraction);
    out << "snord-split 1\n";
    out << "seed " << s.seed << "\n";
    out << "label_fraction " << buf << "\n";
    auto section = [&](const char* name, const std::vector<std::size_t>& v) {
        out << name << ' ' << v.size() << '\n';
        for (std::size_t k = 0; k < v.size(); ++k) out << (k ? " " : "") << v[k];
        out << '\n';
    };
    section("labeled", s.labeled);
    section("unlabeled", s.unlabeled);
    section("val", s.val);
    return out.str();
}

inline SSLSplit parse_split(const std::string& text) {
    std::istringstream in(text);
    auto expect = [&](const std::string& key) {
        std::string k;
        if (!(in >> k) || k != key) fail(ErrorKind::io, "split file: expected '" + key + "'");
    };
    SSLSplit s;
    int version = 0;
    expect("snord-split");
    in >> version;
    if (version != 1) fail(ErrorKind::io, "split file: unsupported version");
    expect("seed");
    in >> s.seed;
    expect("label_fraction");
    std::string frac;
    in >> frac;
    s.label_fraction = std::stod(frac);
    auto section = [&](const char* name, std::vector<std::size_t>& v) {
        expect(name);
        std::size_t n = 0;
        if (!(in >> n)) fail(ErrorKind::io, std::string("split file: bad count for ") + name);
        v.resize(n);
        for (auto& i : v)
            if (!(in >> i)) fail(ErrorKind::io, std::string("split file: truncated ") + name);
    };
    section("labeled", s.labeled);
    section("unlabeled", s.unlabeled);
    section("val", s.val);
    return s;
}

inline void save_split(const SSLSplit& s, const std::string& path) { write_file_bytes(path, format_split(s)); }
inline SSLSplit load_split(const std::string& path) { return parse_split(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentKind { identity, weak, strong };

enum class StrongOpKind { brightness, contrast, noise, solarize };

struct StrongOp {
    StrongOpKind kind;
    double magnitude;
};

/// Default strong op set. Magnitudes are maxima; each application draws a
/// uniform fraction of it.
inline std::vector<StrongOp> default_strong_ops() {
    return {{StrongOpKind::brightness, 0.3},
            {StrongOpKind::contrast, 0.5},
            {StrongOpKind::noise, 0.1},
            {StrongOpKind::solarize, 0.5}};
}

struct AugmentationPolicy {
    AugmentKind kind = AugmentKind::identity;
    int crop_padding = 1;
    double flip_probability = 0.5;
    std::vector<StrongOp> strong_ops = default_strong_ops();
    int strong_ops_per_sample = 2;
    /// Cutout square side as a fraction of min(height, width); 0 disables.
    double cutout_fraction = 0.5;
    std::uint64_t seed = 0;

    static AugmentationPolicy identity() { return {}; }
    static AugmentationPolicy weak(std::uint64_t seed, int padding = 1, double flip = 0.5) {
        AugmentationPolicy p;
        p.kind = AugmentKind::weak;
        p.crop_padding = padding;
        p.flip_probability = flip;
        p.seed = seed;
        return p;
    }
    static AugmentationPolicy strong(std::uint64_t seed, int padding = 1, double flip = 0.5) {
        auto p = weak(seed, padding, flip);
        p.kind = AugmentKind::strong;
        return p;
    }
};

namespace detail {

inline void crop_and_flip(std::span<const float> x, const Shape& shape, std::span<float> out, int padding,
                          double flip_probability, Rng& rng) {
    const int H = shape.height, W = shape.width;
    int oy = 0, ox = 0;
    if (padding > 0) {
        oy = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * padding + 1)) - padding;
        ox = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * padding + 1)) - padding;
    }
    const bool flip = uniform01(rng) < flip_probability;
    for (int c = 0; c < shape.channels; ++c) {
        const float* src = x.data() + static_cast<std::size_t>(c) * H * W;
        float* dst = out.data() + static_cast<std::size_t>(c) * H * W;
        for (int y = 0; y < H; ++y) {
            const int sy = y + oy;
            for (int xx = 0; xx < W; ++xx) {
                int sx = xx + ox;
                if (flip) sx = W - 1 - sx;
                dst[y * W + xx] = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? src[sy * W + sx] : 0.0f;
            }
        }
    }
}

inline void apply_strong_op(const StrongOp& op, std::span<float> x, Rng& rng) {
    const double u = uniform01(rng);
    switch (op.kind) {
    case StrongOpKind::brightness: {
        const auto delta = static_cast<float>(op.magnitude * (2.0 * u - 1.0));
        for (auto& v : x) v += delta;
        break;
    }
    case StrongOpKind::contrast: {
        const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
        const double factor = 1.0 + op.magnitude * (2.0 * u - 1.0);
        for (auto& v : x) v = static_cast<float>(mean + (v - mean) * factor);
        break;
    }
    case StrongOpKind::noise: {
        std::normal_distribution<double> n(0.0, op.magnitude * u);
        for (auto& v : x) v += static_cast<float>(n(rng));
        break;
    }
    case StrongOpKind::solarize: {
        const auto threshold = static_cast<float>(1.0 - op.magnitude * u);
        for (auto& v : x)
            if (v >= threshold) v = 1.0f - v;
        break;
    }
    }
}

}  // namespace detail

/// Applies `policy` to one image. Randomness is keyed by (policy.seed, epoch, index).
inline std::vector<float> augment(std::span<const float> x, const Shape& shape, const AugmentationPolicy& policy,
                                  std::uint64_t epoch, std::uint64_t index) {
    require(x.size() == shape.size(), "augment: input does not match shape");
    std::vector<float> out(x.begin(), x.end());
    if (policy.kind == AugmentKind::identity) return out;

    auto rng = make_rng(policy.seed, Stream::augment, {static_cast<std::uint64_t>(policy.kind), epoch, index});
    detail::crop_and_flip(x, shape, out, policy.crop_padding, policy.flip_probability, rng);

    if (policy.kind == AugmentKind::strong) {
        if (!policy.strong_ops.empty()) {
            for (int k = 0; k < policy.strong_ops_per_sample; ++k) {
                const auto& op = policy.strong_ops[rng() % policy.strong_ops.size()];
                detail::apply_strong_op(op, out, rng);
            }
        }
        if (policy.cutout_fraction > 0.0) {
            const int side = std::max(
                1, static_cast<int>(std::lround(policy.cutout_fraction * std::min(shape.height, shape.width))));
            const int cy = static_cast<int>(rng() % static_cast<std::uint64_t>(shape.height));
            const int cx = static_cast<int>(rng() % static_cast<std::uint64_t>(shape.width));
            const int y0 = cy - side / 2, x0 = cx - side / 2;
            for (int c = 0; c < shape.channels; ++c)
                for (int y = std::max(0, y0); y < std::min(shape.height, y0 + side); ++y)
                    for (int xx = std::max(0, x0); xx < std::min(shape.width, x0 + side); ++xx)
                        out[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + xx] = 0.5f;
        }
    }
    for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

// ---------------------------------------------------------------------------
// Built-in synthetic dataset: each class is a fixed arrangement of Gaussian
// blobs; examples jitter blob centres and amplitudes and add pixel noise.

struct SyntheticSpec {
    int num_classes = 10;
    int examples_per_class = 500;
    Shape shape{1, 8, 8};
    int blobs_per_class = 3;
    /// Distinct blob arrangements per class; each example draws one.
    int modes_per_class = 2;
    double blob_sigma_min = 0.9;
    double blob_sigma_max = 1.6;
    double center_jitter = 0.75;
    double amplitude_min = 0.5;
    double amplitude_max = 1.0;
    double noise_std = 0.15;
    /// Per-example global gain drawn from [gain_min, 1] and offset from [0, offset_max].
    double gain_min = 1.0;
    double offset_max = 0.0;
    /// One extra blob at a uniformly random position per example.
    double distractor_amplitude = 0.5;
    std::uint64_t seed = 0;
    /// Draws a disjoint sample from the same class prototypes (e.g. a test set).
    std::uint64_t example_offset = 0;
};

inline Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
    require(spec.num_classes > 0 && spec.examples_per_class > 0, "synthetic: empty dataset");
    require(spec.modes_per_class >= 1 && spec.blobs_per_class >= 1, "synthetic: need at least one mode and blob");
    const Shape& s = spec.shape;
    const auto C = static_cast<std::size_t>(spec.num_classes);

    struct Blob {
        double cy, cx, sigma;
        std::vector<double> channel_weight;
    };
    const auto M = static_cast<std::size_t>(spec.modes_per_class);
    std::vector<std::vector<Blob>> protos(C * M);
    {
        auto rng = make_rng(spec.seed, Stream::synthetic, {0});
        for (auto& blobs : protos) {
            for (int b = 0; b < spec.blobs_per_class; ++b) {
                Blob blob;
                blob.cy = 1.0 + uniform01(rng) * (s.height - 2.0);
                blob.cx = 1.0 + uniform01(rng) * (s.width - 2.0);
                blob.sigma = spec.blob_sigma_min + uniform01(rng) * (spec.blob_sigma_max - spec.blob_sigma_min);
                for (int c = 0; c < s.channels; ++c) blob.channel_weight.push_back(0.4 + 0.6 * uniform01(rng));
                blobs.push_back(std::move(blob));
            }
        }
    }

    const std::size_t n = C * static_cast<std::size_t>(spec.examples_per_class);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % C);
    {
        auto rng = make_rng(spec.seed, Stream::synthetic, {1, spec.example_offset});
        std::shuffle(labels.begin(), labels.end(), rng);
    }

    std::vector<float> pixels(n * s.size());
    std::vector<double> img(s.size());
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = make_rng(spec.seed, Stream::synthetic, {2, i + spec.example_offset});
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::fill(img.begin(), img.end(), 0.0);
        auto paint = [&](double cy, double cx, double sigma, double amp, const std::vector<double>& cw) {
            for (int c = 0; c < s.channels; ++c)
                for (int y = 0; y < s.height; ++y)
                    for (int x = 0; x < s.width; ++x) {
                        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        img[(static_cast<std::size_t>(c) * s.height + y) * s.width + x] +=
                            amp * cw[static_cast<std::size_t>(c)] * std::exp(-d2 / (2.0 * sigma * sigma));
                    }
        };
        const std::size_t mode = M > 1 ? static_cast<std::size_t>(rng() % M) : 0;
        for (const auto& blob : protos[static_cast<std::size_t>(labels[i]) * M + mode]) {
            const double jy = spec.center_jitter * (2.0 * uniform01(rng) - 1.0);
            const double jx = spec.center_jitter * (2.0 * uniform01(rng) - 1.0);
            const double amp = spec.amplitude_min + uniform01(rng) * (spec.amplitude_max - spec.amplitude_min);
            paint(blob.cy + jy, blob.cx + jx, blob.sigma, amp, blob.channel_weight);
        }
        if (spec.distractor_amplitude > 0.0) {
            const double cy = uniform01(rng) * (s.height - 1.0);
            const double cx = uniform01(rng) * (s.width - 1.0);
            const std::vector<double> cw(static_cast<std::size_t>(s.channels), 1.0);
            paint(cy, cx, spec.blob_sigma_min, spec.distractor_amplitude * uniform01(rng), cw);
        }
        const double gain = spec.gain_min + uniform01(rng) * (1.0 - spec.gain_min);
        const double offset = uniform01(rng) * spec.offset_max;
        for (std::size_t k = 0; k < img.size(); ++k) {
            const double v = gain * img[k] + offset + spec.noise_std * gauss(rng);
            pixels[i * s.size() + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return Dataset(s, spec.num_classes, std::move(pixels), std::move(labels));
}

// ---------------------------------------------------------------------------
// On-disk dataset directory:
//
//   header.json          {"format":"snord-dataset","version":1,"shape":[C,H,W],
//                         "dtype":"f32"|"u8","num_classes":K,
//                         "splits":{"train":{"count":N}, ...}}
//   <split>.images.bin   N*C*H*W values, little-endian f32 in [0,1] or u8 (v/255)
//   <split>.labels.bin   N little-endian int32 class ids
//
// A "val" split, when present, is the official validation set.

enum class PixelType { f32, u8 };

inline void save_dataset(const std::string& dir, const std::vector<std::pair<std::string, const Dataset*>>& splits,
                         PixelType dtype = PixelType::f32) {
    require(!splits.empty(), "save_dataset: no splits");
    std::filesystem::create_directories(dir);
    const Dataset& first = *splits.front().second;
    nlohmann::json header = {{"format", "snord-dataset"},
                             {"version", 1},
                             {"shape", {first.shape().channels, first.shape().height, first.shape().width}},
                             {"dtype", dtype == PixelType::f32 ? "f32" : "u8"},
                             {"num_classes", first.num_classes()},
                             {"splits", nlohmann::json::object()}};
    for (const auto& [name, ds] : splits) {
        require(ds->shape() == first.shape() && ds->num_classes() == first.num_classes(),
                "save_dataset: splits disagree on shape or class count");
        header["splits"][name] = {{"count", ds->size()}};
        detail::ByteWriter img, lab;
        if (dtype == PixelType::f32) {
            img.put_span(ds->pixels());
        } else {
            for (float v : ds->pixels()) img.put(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
        }
        for (int y : ds->labels()) lab.put(static_cast<std::int32_t>(y));
        write_file_bytes(dir + "/" + name + ".images.bin", img.bytes());
        write_file_bytes(dir + "/" + name + ".labels.bin", lab.bytes());
    }
    write_file_bytes(dir + "/header.json", header.dump(2) + "\n");
}

inline bool dataset_has_split(const std::string& dir, const std::string& split) {
    const auto header = nlohmann::json::parse(read_file_bytes(dir + "/header.json"));
    return header.contains("splits") && header["splits"].contains(split);
}

inline Dataset load_dataset(const std::string& dir, const std::string& split = "train") {
    if (!std::filesystem::exists(dir + "/header.json")) fail(ErrorKind::io, "dataset header missing in " + dir);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(read_file_bytes(dir + "/header.json"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, std::string("dataset header: ") + e.what());
    }
    if (header.value("format", "") != "snord-dataset" || header.value("version", 0) != 1)
        fail(ErrorKind::io, "dataset header: unsupported format");
    if (!header["splits"].contains(split)) fail(ErrorKind::io, "dataset has no split '" + split + "'");
    const auto dims = header["shape"].get<std::vector<int>>();
    if (dims.size() != 3) fail(ErrorKind::io, "dataset header: shape must have 3 entries");
    const Shape shape{dims[0], dims[1], dims[2]};
    const int num_classes = header["num_classes"].get<int>();
    const auto count = header["splits"][split]["count"].get<std::size_t>();
    const std::string dtype = header["dtype"].get<std::string>();

    const auto img = read_file_bytes(dir + "/" + split + ".images.bin");
    const auto lab = read_file_bytes(dir + "/" + split + ".labels.bin");
    std::vector<float> pixels;
    if (dtype == "f32") {
        if (img.size() != count * shape.size() * sizeof(float)) fail(ErrorKind::io, "image file size mismatch");
        detail::ByteReader r(img, "images");
        pixels = r.get_vector<float>(count * shape.size());
    } else if (dtype == "u8") {
        if (img.size() != count * shape.size()) fail(ErrorKind::io, "image file size mismatch");
        pixels.resize(img.size());
        for (std::size_t k = 0; k < img.size(); ++k)
            pixels[k] = static_cast<float>(static_cast<unsigned char>(img[k])) / 255.0f;
    } else {
        fail(ErrorKind::io, "dataset header: unknown dtype " + dtype);
    }
    if (lab.size() != count * sizeof(std::int32_t)) fail(ErrorKind::io, "label file size mismatch");
    detail::ByteReader lr(lab, "labels");
    auto raw = lr.get_vector<std::int32_t>(count);
    std::vector<int> labels(raw.begin(), raw.end());
    try {
        return Dataset(shape, num_classes, std::move(pixels), std::move(labels));
    } catch (const Error& e) {
        fail(ErrorKind::io, std::string("dataset ") + dir + ": " + e.what());
    }
}

}  // namespace snord
