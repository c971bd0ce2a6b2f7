#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>

namespace slvm {

// Precondition / shape-contract violations. The CLI maps these to exit code 2.
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values produced by an op or optimizer step. CLI exit code 3.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

// Deterministic splitmix64 stream. Streams derived via derive() depend only on
// the construction seed and the keys, never on draw order, so any consumer can
// key its randomness by (step, sequence, timestep, ...) and get results that
// are independent of evaluation order, segmentation and thread count.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(mix_(seed ^ 0x9e3779b97f4a7c15ull)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix_(state_);
    }

    // in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // in (0, 1)
    double uniform_pos() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // in [0, n)
    long uniform_int(long n) {
        return n <= 0 ? 0 : static_cast<long>(next_u64() % static_cast<uint64_t>(n));
    }

    // Independent stream keyed by (a,b,c,d) off the original seed.
    Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0) const {
        uint64_t h = seed_;
        h = mix_(h ^ mix_(a + 0x9e3779b97f4a7c15ull));
        h = mix_(h ^ mix_(b + 0xbf58476d1ce4e5b9ull));
        h = mix_(h ^ mix_(c + 0x94d049bb133111ebull));
        h = mix_(h ^ mix_(d + 0x2545f4914f6cdd1dull));
        return Rng(h);
    }

    uint64_t seed() const { return seed_; }

private:
    static uint64_t mix_(uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    uint64_t seed_;
    uint64_t state_;
};

}  // namespace slvm
