// Shared plumbing: errors, deterministic RNG draws, parallel loops,
// checksums and little-endian binary IO.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sb {

inline constexpr const char* kVersion = "0.1.0";

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct ArgumentError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// All random draws in the library go through Rng so that results are
// reproducible from a seed across platforms. std::uniform_*_distribution is
// implementation-defined, so uniforms are derived from raw mt19937 words.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next_u32() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return next_u32() * (1.0 / 4294967296.0); }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        // rejection sampling keeps the draw unbiased
        if (n == 0) throw ArgumentError("Rng::index: n must be positive");
        if (n == 1) return 0;
        const std::uint64_t limit = (0x100000000ULL / n) * n;
        std::uint64_t v;
        do {
            v = next_u32();
        } while (v >= limit);
        return static_cast<std::size_t>(v % n);
    }

    // standard normal via Box-Muller on two uniform words
    double normal() {
        double u1 = (next_u32() + 1.0) * (1.0 / 4294967297.0);
        double u2 = next_u32() * (1.0 / 4294967296.0);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937 eng_;
};

// derive an independent stream for a sub-task (epoch, sample, ...)
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    h ^= stream + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

// ---------------------------------------------------------------------------
// parallel_for: static partition of [0, n) over `jobs` threads.
// Work must be independent per index; aggregation is the caller's job.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (jobs == 0) jobs = hw;
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (unsigned t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// CRC-32 (IEEE, reflected, poly 0xEDB88320) for file integrity trailers.
inline std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::vector<std::uint32_t> t(256);
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// FNV-1a 64-bit, used for provenance hashes of configs and model files.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}
inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// ---------------------------------------------------------------------------
// Little-endian binary IO.
namespace io {

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of file");
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(buf[i]) << (8 * i);
    return static_cast<T>(u);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<std::uint32_t>(os, bits);
}

inline float read_f32(std::istream& is) {
    std::uint32_t bits = read_le<std::uint32_t>(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

template <typename T>
void write_be(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((u >> (8 * (sizeof(T) - 1 - i))) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_be(std::istream& is) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of file");
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u = (u << 8) | buf[i];
    return static_cast<T>(u);
}

} // namespace io

// round half to even, independent of the FP environment
inline double round_half_even(double x) {
    double f = std::floor(x);
    double d = x - f;
    if (d > 0.5) return f + 1.0;
    if (d < 0.5) return f;
    return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

} // namespace sb
