#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace snord {

/// Error categories. The CLI maps each one to a process exit code.
enum class ErrorKind {
    invalid_argument,
    config,
    divergence,
    missing_dependency,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::invalid_argument, what);
}

// ---------------------------------------------------------------------------
// Randomness
//
// Every random decision is drawn from a generator seeded by hashing
// (run seed, stream, key...). Nothing shares a sequential stream, so results
// do not depend on evaluation order and a run can resume from counters alone.

enum class Stream : std::uint64_t {
    split = 1,
    init = 2,
    synthetic = 3,
    augment = 4,
    generator_batches = 5,
    robust_batches = 6,
    nar_sampling = 7,
    attack_start = 8,
    eval_attack = 9,
    dropout = 10,
    label_noise = 11,
};

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = mix64(seed);
    for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(stream)});
    for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return Rng(h);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64) for fingerprints and artifact verification.

class Fnv1a {
public:
    void update(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    template <class T>
    void update_span(std::span<const T> s) noexcept {
        update(s.data(), s.size_bytes());
    }
    template <class T>
    void update_value(const T& v) noexcept {
        update(&v, sizeof(T));
    }
    std::uint64_t digest() const noexcept { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline std::uint64_t hash_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    return h.digest();
}

namespace detail {

// Little-endian binary buffers; every on-disk binary format here targets
// little-endian hosts and stores native IEEE-754 values.
class ByteWriter {
public:
    template <class T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    template <class T>
    void put_span(std::span<const T> s) {
        buf_.append(reinterpret_cast<const char*>(s.data()), s.size_bytes());
    }
    void put_bytes(std::string_view s) { buf_.append(s); }
    const std::string& bytes() const noexcept { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <class T>
    T get() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    template <class T>
    std::vector<T> get_vector(std::size_t n) {
        std::vector<T> v(n);
        take(v.data(), n * sizeof(T));
        return v;
    }
    std::string get_bytes(std::size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    void take(void* dst, std::size_t n) {
        if (bytes_.size() - pos_ < n) fail(ErrorKind::io, what_ + ": truncated");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::string_view bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace detail
}  // namespace snord
