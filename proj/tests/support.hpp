#pragma once

// Helpers shared by the test binaries.

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "snord/snord.hpp"

namespace snord::testing {

struct ModelCase {
    Shape shape;
    int classes;
    std::string arch;
};

/// Small random architectures over a few input shapes; every entry builds.
inline ModelCase random_model_case(Rng& rng) {
    static const std::array<Shape, 3> shapes{Shape{1, 8, 8}, Shape{3, 6, 6}, Shape{2, 4, 4}};
    const Shape s = shapes[rng() % shapes.size()];
    const int C = 2 + static_cast<int>(rng() % 9);
    const std::string c = std::to_string(C);
    const std::array<std::string, 6> archs{
        "linear:" + c,
        "linear:6,relu,linear:" + c,
        "conv:4:3:1:1,relu,avgpool:2,linear:" + c,
        "conv:4:3:1:1,relu,avgpool:2,conv:5:3:1:1,relu,linear:" + c,
        "conv:3:3:2:0,relu,linear:" + c,
        "conv:4:3:1:1,relu,dropout:0.3,linear:5,relu,linear:" + c,
    };
    return {s, C, archs[rng() % archs.size()]};
}

template <class T>
Classifier<T> make_model(const ModelCase& mc, std::uint64_t seed) {
    Classifier<T> m(mc.shape, mc.classes, mc.arch);
    m.init(seed);
    return m;
}

/// Uniform input in [0,1]; roughly one pixel in eight sits exactly on a box edge.
template <class T>
std::vector<T> random_input(const Shape& s, Rng& rng) {
    std::vector<T> x(s.size());
    for (auto& v : x) {
        const double u = uniform01(rng);
        v = u < 0.0625 ? T(0) : (u < 0.125 ? T(1) : static_cast<T>(uniform01(rng)));
    }
    return x;
}

/// Random point of the probability simplex with `n` entries.
inline LabelDistribution random_distribution(int n, Rng& rng) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(static_cast<std::size_t>(n));
    double s = 0.0;
    for (auto& v : p) s += (v = e(rng));
    for (auto& v : p) v /= s;
    return LabelDistribution(std::move(p));
}

/// Small synthetic dataset for trainer tests.
inline Dataset tiny_dataset(int per_class = 20, int classes = 4, std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.num_classes = classes;
    s.examples_per_class = per_class;
    s.shape = {1, 6, 6};
    s.seed = seed;
    return make_synthetic_dataset(s);
}

inline std::string tiny_arch(int classes) {
    return "conv:3:3:1:1,relu,avgpool:2,linear:" + std::to_string(classes);
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("snord-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::string str() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

}  // namespace snord::testing
