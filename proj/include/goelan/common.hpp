#pragma once

// Shared error types, string helpers and deterministic RNG streams.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace goelan {

namespace detail {
template <class... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}
}  // namespace detail

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (presets, block specs, CLI/config files).
struct config_error : error {
    using error::error;
};

// Tensor/feature-map shape contract violations.
struct shape_error : error {
    using error::error;
};

// File and serialization failures.
struct io_error : error {
    using error::error;
};

// Malformed dataset inputs (manifests, label files).
struct parse_error : error {
    using error::error;
};

// Non-finite loss or broken optimizer state: training must stop.
struct train_abort : error {
    using error::error;
};

template <class... Args>
[[noreturn]] void fail_config(Args&&... args) {
    throw config_error(detail::cat(std::forward<Args>(args)...));
}

template <class... Args>
[[noreturn]] void fail_shape(Args&&... args) {
    throw shape_error(detail::cat(std::forward<Args>(args)...));
}

template <class... Args>
[[noreturn]] void fail_io(Args&&... args) {
    throw io_error(detail::cat(std::forward<Args>(args)...));
}

// splitmix64; used to derive independent per-item streams from (seed, epoch, index)
// so the batch stream does not depend on worker scheduling.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ b); }
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix64(mix64(a, b) ^ c);
}

// Thin RNG wrapper. All draws go through explicit helpers so streams are
// reproducible and serializable (mt19937_64 has stream operators).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // uniform in [0,1)
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(gen_() % std::uint64_t(hi - lo + 1));
    }

    // Box-Muller without cached spare, so the stream state is just the engine.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    bool chance(double p) { return uniform() < p; }

    // symmetric Beta(a,a) via two gammas (Marsaglia-Tsang needs a>=1; mixup uses a>=1)
    double beta_symmetric(double a) {
        double x = gamma_(a);
        double y = gamma_(a);
        if (x + y <= 0.0) return 0.5;
        return x / (x + y);
    }

    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (!is) fail_io("invalid RNG state string");
    }

private:
    double gamma_(double a) {
        // Marsaglia & Tsang for a >= 1; boost for a < 1.
        if (a < 1.0) {
            double u = 0.0;
            do {
                u = uniform();
            } while (u <= 0.0);
            return gamma_(a + 1.0) * std::pow(u, 1.0 / a);
        }
        double d = a - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::mt19937_64 gen_;
};

}  // namespace goelan
