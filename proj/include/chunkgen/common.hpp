#ifndef CHUNKGEN_COMMON_HPP
#define CHUNKGEN_COMMON_HPP

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace chunkgen {

// Error taxonomy maps onto CLI exit codes: usage 1, input format 2,
// numeric/constraint 3.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConstraintError : std::runtime_error {
    explicit ConstraintError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

// Deterministic RNG. std::mt19937_64 supplies the stream; the distributions
// are hand-rolled so results do not depend on libstdc++ internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64() { return state_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return double(state_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(state_() % span);
    }

    // Box-Muller, one value per call (the pair's second half is cached).
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Independent child stream (splitmix64 over the original seed).
    Rng fork(uint64_t stream) const {
        uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

private:
    uint64_t seed_;
    std::mt19937_64 state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// Contiguous-block parallel for. Each worker owns a disjoint index range, so
// per-index writes need no synchronization and results do not depend on the
// thread count.
inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    if (threads <= 0) threads = int(std::thread::hardware_concurrency());
    if (threads <= 1 || n < 256) {
        body(0, n);
        return;
    }
    int64_t nt = std::min<int64_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(size_t(nt));
    int64_t chunk = (n + nt - 1) / nt;
    for (int64_t t = 0; t < nt; ++t) {
        int64_t lo = t * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace chunkgen

#endif
