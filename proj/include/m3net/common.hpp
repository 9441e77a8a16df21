#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace m3net {

// Input/contract violations. The CLI maps these to exit code 2,
// anything else to exit code 3.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Threading. Each output element is always produced by exactly one thread,
// so results are bit-identical for any thread count; --threads 1 is the
// canonical single-threaded mode.

int thread_cap();
void set_thread_cap(int n);

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 plus hand-rolled distributions so the byte
// streams do not depend on the standard library's distribution algorithms.

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix(seed)) {}

    // Independent substream for a named purpose.
    Rng stream(std::string_view purpose) const {
        uint64_t h = 1469598103934665603ull;
        for (char c : purpose) h = (h ^ static_cast<uint8_t>(c)) * 1099511628211ull;
        return Rng(seed_mix(state_, h));
    }

    uint64_t next_u64() {
        // xoshiro-style splitmix64 sequence
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }
    static uint64_t seed_mix(uint64_t a, uint64_t b) { return splitmix(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2))); }

    uint64_t state_;
};

}  // namespace m3net
