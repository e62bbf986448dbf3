#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ircnn {

/// Seeded generator with distribution code that does not depend on the
/// standard library's (implementation-defined) distributions, so streams are
/// reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the spare value is discarded to keep
    /// the state a function of the engine alone.
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n);

    std::string state() const;
    void set_state(const std::string& s);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with a string so each named stream is independent.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& name);

} // namespace ircnn
