#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <set>

#include "snord/data.hpp"
#include "support.hpp"

using namespace snord;

namespace {

std::vector<int> balanced_labels(int classes, int per_class, std::uint64_t seed = 0) {
    std::vector<int> labels;
    for (int c = 0; c < classes; ++c) labels.insert(labels.end(), per_class, c);
    auto rng = make_rng(seed, Stream::init);
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::io;
}

void expect_partition(const SSLSplit& s, std::size_t n) {
    std::vector<int> seen(n, 0);
    for (const auto* set : {&s.labeled, &s.unlabeled, &s.val})
        for (auto i : *set) ++seen.at(i);
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    EXPECT_TRUE(std::is_sorted(s.labeled.begin(), s.labeled.end()));
    EXPECT_TRUE(std::is_sorted(s.unlabeled.begin(), s.unlabeled.end()));
}

}  // namespace

// 45,000-example pool: no validation carve-out so the pool is the whole set.
TEST(Split, OnePercentOf45kGives45PerClass) {
    const auto labels = balanced_labels(10, 4500);
    const auto s = make_ssl_split(labels.size(), 10, labels, 0.01, 3, SplitOptions{0.0});
    EXPECT_EQ(s.labeled.size(), 450u);
    EXPECT_EQ(s.unlabeled.size(), 44550u);
    for (auto c : per_class_counts(s.labeled, labels, 10)) EXPECT_EQ(c, 45u);
    expect_partition(s, labels.size());
}

TEST(Split, TenthOfAPercentOf45kGivesFourOrFivePerClass) {
    const auto labels = balanced_labels(10, 4500);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = make_ssl_split(labels.size(), 10, labels, 0.001, seed, SplitOptions{0.0});
        const auto counts = per_class_counts(s.labeled, labels, 10);
        std::size_t total = 0, fives = 0;
        for (auto c : counts) {
            EXPECT_TRUE(c == 4 || c == 5) << c;
            total += c;
            fives += c == 5;
        }
        EXPECT_EQ(total, 45u);
        EXPECT_EQ(fives, 5u);
    }
}

TEST(Split, FullFractionLabelsTheWholePool) {
    const auto labels = balanced_labels(4, 50);
    const auto s = make_ssl_split(labels.size(), 4, labels, 1.0, 1);
    EXPECT_TRUE(s.unlabeled.empty());
    EXPECT_EQ(s.labeled.size() + s.val.size(), labels.size());
    EXPECT_EQ(s.pool(), s.labeled);
}

TEST(Split, ValidationCarveOutIsStratifiedNineToOne) {
    const auto labels = balanced_labels(10, 500);
    const auto s = make_ssl_split(labels.size(), 10, labels, 0.1, 2);
    EXPECT_EQ(s.val.size(), 500u);
    for (auto c : per_class_counts(s.val, labels, 10)) EXPECT_EQ(c, 50u);
    EXPECT_EQ(s.labeled.size(), 450u);
    EXPECT_EQ(s.labeled.size() + s.unlabeled.size(), 4500u);
    expect_partition(s, labels.size());
}

TEST(Split, DeterministicAndSeedSensitive) {
    const auto labels = balanced_labels(5, 100);
    const auto a = make_ssl_split(labels.size(), 5, labels, 0.2, 9);
    const auto b = make_ssl_split(labels.size(), 5, labels, 0.2, 9);
    const auto c = make_ssl_split(labels.size(), 5, labels, 0.2, 10);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.labeled, c.labeled);
    EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Split, BalanceHoldsOnUnevenClasses) {
    std::vector<int> labels;
    for (int c = 0; c < 7; ++c) labels.insert(labels.end(), 30 + 11 * c, c);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const double f = 0.05 + 0.4 * static_cast<double>(seed) / 50.0;
        const auto s = make_ssl_split(labels.size(), 7, labels, f, seed);
        const auto counts = per_class_counts(s.labeled, labels, 7);
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        EXPECT_LE(*hi - *lo, 1u);
        expect_partition(s, labels.size());
    }
    // A balanced quota larger than the smallest class cannot be met.
    EXPECT_EQ(kind_of([&] { make_ssl_split(labels.size(), 7, labels, 0.9, 0); }), ErrorKind::invalid_argument);
}

TEST(Split, Errors) {
    const auto labels = balanced_labels(10, 20);
    EXPECT_EQ(kind_of([&] { make_ssl_split(labels.size(), 10, labels, 0.0, 0); }), ErrorKind::invalid_argument);
    EXPECT_EQ(kind_of([&] { make_ssl_split(labels.size(), 10, labels, 1.5, 0); }), ErrorKind::invalid_argument);
    // 0.01 of 180 rounds to 2 labeled examples: eight classes would get none.
    EXPECT_EQ(kind_of([&] { make_ssl_split(labels.size(), 10, labels, 0.01, 0); }), ErrorKind::invalid_argument);
    auto bad = labels;
    bad[3] = 12;
    EXPECT_EQ(kind_of([&] { make_ssl_split(bad.size(), 10, bad, 0.5, 0); }), ErrorKind::invalid_argument);
    auto missing = labels;
    std::replace(missing.begin(), missing.end(), 9, 0);
    EXPECT_EQ(kind_of([&] { make_ssl_split(missing.size(), 10, missing, 0.5, 0); }), ErrorKind::invalid_argument);
}

TEST(SplitFile, RoundTripIsBitExact) {
    const auto labels = balanced_labels(3, 40);
    const auto s = make_ssl_split(labels.size(), 3, labels, 0.3, 77);
    const auto text = format_split(s);
    EXPECT_EQ(text.rfind("snord-split 1\n", 0), 0u);
    const auto back = parse_split(text);
    EXPECT_EQ(back, s);
    EXPECT_EQ(format_split(back), text);

    snord::testing::TempDir dir("split");
    save_split(s, dir.str() + "/s.txt");
    EXPECT_EQ(load_split(dir.str() + "/s.txt"), s);
}

TEST(SplitFile, EmptySectionsRoundTrip) {
    SSLSplit s;
    s.labeled = {0, 1, 2};
    s.label_fraction = 1.0;
    EXPECT_EQ(parse_split(format_split(s)), s);
}

TEST(SplitFile, MalformedInputIsAnIoError) {
    EXPECT_EQ(kind_of([] { parse_split("nonsense"); }), ErrorKind::io);
    EXPECT_EQ(kind_of([] { parse_split("snord-split 2\n"); }), ErrorKind::io);
    EXPECT_EQ(kind_of([] { parse_split("snord-split 1\nseed 1\nlabel_fraction 0.5\nlabeled 3\n1 2\n"); }),
              ErrorKind::io);
}

// ---------------------------------------------------------------------------

TEST(Augment, IdentityReturnsInputBitExactly) {
    const auto d = snord::testing::tiny_dataset();
    const auto x = d.image(3);
    const auto y = augment(x, d.shape(), AugmentationPolicy::identity(), 4, 3);
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
}

TEST(Augment, DegenerateWeakPolicyIsIdentity) {
    const auto d = snord::testing::tiny_dataset();
    const auto p = AugmentationPolicy::weak(5, 0, 0.0);
    for (std::size_t i = 0; i < 10; ++i) {
        const auto x = d.image(i);
        const auto y = augment(x, d.shape(), p, i, i);
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
    }
}

TEST(Augment, KeyedByEpochAndIndex) {
    const auto d = snord::testing::tiny_dataset();
    const auto x = d.image(0);
    for (const auto& p : {AugmentationPolicy::weak(5), AugmentationPolicy::strong(6)}) {
        EXPECT_EQ(augment(x, d.shape(), p, 2, 7), augment(x, d.shape(), p, 2, 7));
        int differs = 0;
        for (std::uint64_t e = 0; e < 10; ++e) differs += augment(x, d.shape(), p, e, 7) != augment(x, d.shape(), p, 2, 7);
        EXPECT_GT(differs, 0);
    }
}

TEST(Augment, OutputStaysInUnitBoxAndShape) {
    const Shape s{3, 5, 7};
    auto rng = make_rng(1, Stream::init);
    const auto strong = AugmentationPolicy::strong(3, 2, 0.5);
    const auto weak = AugmentationPolicy::weak(4, 2, 0.5);
    for (int n = 0; n < 300; ++n) {
        const auto x = snord::testing::random_input<float>(s, rng);
        for (const auto* p : {&weak, &strong}) {
            const auto y = augment(x, s, *p, n, n);
            ASSERT_EQ(y.size(), x.size());
            for (float v : y) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
        }
    }
}

TEST(Augment, FlipOnlyMirrorsRows) {
    const Shape s{1, 2, 3};
    const std::vector<float> x{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
    const auto y = augment(x, s, AugmentationPolicy::weak(1, 0, 1.0), 0, 0);
    EXPECT_EQ(y, (std::vector<float>{0.3f, 0.2f, 0.1f, 0.6f, 0.5f, 0.4f}));
}

TEST(Augment, ShapeMismatchRejected) {
    const std::vector<float> x(5, 0.5f);
    EXPECT_EQ(kind_of([&] { augment(x, Shape{1, 2, 3}, AugmentationPolicy::weak(1), 0, 0); }),
              ErrorKind::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Synthetic, ShapeBalanceRangeAndDeterminism) {
    SyntheticSpec spec;
    spec.num_classes = 5;
    spec.examples_per_class = 30;
    spec.shape = {2, 6, 6};
    spec.seed = 4;
    const auto a = make_synthetic_dataset(spec);
    const auto b = make_synthetic_dataset(spec);
    EXPECT_EQ(a.size(), 150u);
    EXPECT_EQ(a.shape(), spec.shape);
    EXPECT_TRUE(std::equal(a.pixels().begin(), a.pixels().end(), b.pixels().begin(), b.pixels().end()));
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (auto c : per_class_counts(idx, a.labels(), 5)) EXPECT_EQ(c, 30u);
    for (float v : a.pixels()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);

    auto other = spec;
    other.example_offset = 1000;
    const auto c = make_synthetic_dataset(other);
    EXPECT_FALSE(std::equal(a.pixels().begin(), a.pixels().end(), c.pixels().begin(), c.pixels().end()));
}

TEST(Synthetic, ClassesAreSeparableByNearestCentroid) {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.examples_per_class = 60;
    spec.modes_per_class = 1;
    spec.noise_std = 0.05;
    spec.distractor_amplitude = 0.0;
    const auto d = make_synthetic_dataset(spec);
    const std::size_t n = d.shape().size();
    std::vector<std::vector<double>> centroid(4, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < n; ++k) centroid[d.label(i)][k] += d.image(i)[k] / 60.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        int best = 0;
        double bd = 1e300;
        for (int c = 0; c < 4; ++c) {
            double dist = 0.0;
            for (std::size_t k = 0; k < n; ++k) dist += std::pow(d.image(i)[k] - centroid[c][k], 2);
            if (dist < bd) bd = dist, best = c;
        }
        ok += best == d.label(i);
    }
    EXPECT_GT(static_cast<double>(ok) / d.size(), 0.9);
}

// ---------------------------------------------------------------------------

TEST(Dataset, RejectsOutOfRangePixelsAndLabels) {
    EXPECT_EQ(kind_of([] { Dataset(Shape{1, 1, 2}, 2, {0.5f, 1.5f}, {0}); }), ErrorKind::invalid_argument);
    EXPECT_EQ(kind_of([] { Dataset(Shape{1, 1, 2}, 2, {0.5f, 0.5f}, {2}); }), ErrorKind::invalid_argument);
    EXPECT_EQ(kind_of([] { Dataset(Shape{1, 1, 2}, 2, {0.5f}, {0}); }), ErrorKind::invalid_argument);
}

TEST(Dataset, SubsetKeepsOrder) {
    const auto d = snord::testing::tiny_dataset();
    const std::vector<std::size_t> idx{5, 2, 9};
    const auto s = d.subset(idx);
    ASSERT_EQ(s.size(), 3u);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        EXPECT_EQ(s.label(k), d.label(idx[k]));
        EXPECT_TRUE(std::equal(s.image(k).begin(), s.image(k).end(), d.image(idx[k]).begin()));
    }
}

TEST(DatasetFiles, RoundTripFloatAndByte) {
    snord::testing::TempDir dir("dataset");
    const auto train = snord::testing::tiny_dataset(10, 3, 1);
    const auto test = snord::testing::tiny_dataset(4, 3, 2);
    save_dataset(dir.str() + "/f", {{"train", &train}, {"test", &test}});
    const auto back = load_dataset(dir.str() + "/f", "train");
    EXPECT_TRUE(std::equal(back.pixels().begin(), back.pixels().end(), train.pixels().begin(), train.pixels().end()));
    EXPECT_TRUE(std::equal(back.labels().begin(), back.labels().end(), train.labels().begin(), train.labels().end()));
    EXPECT_TRUE(dataset_has_split(dir.str() + "/f", "test"));
    EXPECT_FALSE(dataset_has_split(dir.str() + "/f", "val"));

    save_dataset(dir.str() + "/u", {{"train", &train}}, PixelType::u8);
    const auto q = load_dataset(dir.str() + "/u", "train");
    for (std::size_t k = 0; k < q.pixels().size(); ++k) EXPECT_NEAR(q.pixels()[k], train.pixels()[k], 0.5 / 255 + 1e-6);
}

TEST(DatasetFiles, LoaderErrors) {
    snord::testing::TempDir dir("dataset-bad");
    EXPECT_EQ(kind_of([&] { load_dataset(dir.str() + "/missing"); }), ErrorKind::io);

    const auto train = snord::testing::tiny_dataset(5, 2, 1);
    save_dataset(dir.str() + "/d", {{"train", &train}});
    EXPECT_EQ(kind_of([&] { load_dataset(dir.str() + "/d", "test"); }), ErrorKind::io);

    // Out-of-range class id on disk.
    auto labels = read_file_bytes(dir.str() + "/d/train.labels.bin");
    const std::int32_t bad = 9;
    std::memcpy(labels.data(), &bad, sizeof bad);
    write_file_bytes(dir.str() + "/d/train.labels.bin", labels);
    EXPECT_EQ(kind_of([&] { load_dataset(dir.str() + "/d"); }), ErrorKind::io);

    // Truncated image file.
    save_dataset(dir.str() + "/e", {{"train", &train}});
    auto img = read_file_bytes(dir.str() + "/e/train.images.bin");
    img.resize(img.size() - 4);
    write_file_bytes(dir.str() + "/e/train.images.bin", img);
    EXPECT_EQ(kind_of([&] { load_dataset(dir.str() + "/e"); }), ErrorKind::io);

    // Pixel outside [0,1].
    save_dataset(dir.str() + "/g", {{"train", &train}});
    auto px = read_file_bytes(dir.str() + "/g/train.images.bin");
    const float big = 2.0f;
    std::memcpy(px.data(), &big, sizeof big);
    write_file_bytes(dir.str() + "/g/train.images.bin", px);
    EXPECT_EQ(kind_of([&] { load_dataset(dir.str() + "/g"); }), ErrorKind::io);
}
