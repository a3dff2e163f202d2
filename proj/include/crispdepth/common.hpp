#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace crisp {

// Base error for everything the library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Deterministic RNG wrapper. mt19937_64 supplies the bits; the value
// transforms are hand-rolled so sequences do not depend on standard-library
// distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(static_cast<uint64_t>(uniform() * (hi - lo + 1)));
    }

    // Box-Muller, one value per call (second value cached).
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Truncated normal in [-2, 2] sigmas, rejection sampled.
    double truncated_normal(double stddev) {
        double v = normal();
        while (v < -2.0 || v > 2.0) v = normal();
        return v * stddev;
    }

    std::string state_string() const;
    void restore_state(const std::string& s);

private:
    std::mt19937_64 gen_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// FNV-1a over raw bytes; used for weight-immutability checks.
uint64_t fnv1a(const void* data, size_t nbytes);

// Warning sink. Losses on degenerate inputs warn instead of throwing; tests
// inspect the counter.
void warn(const std::string& msg);
uint64_t warning_count();
void set_warnings_silent(bool silent);

}  // namespace crisp
