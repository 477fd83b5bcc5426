#pragma once

#include <cmath>
#include <cstdint>

namespace pfr {

/// Deterministic splittable counter-based generator (splitmix64 core).
/// Every draw advances a 64-bit counter; split() derives an independent
/// stream from the current state and a label, so module init order can
/// change without perturbing unrelated streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per call, deterministic).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    /// Derive an independent stream keyed by (current state, label).
    Rng split(std::uint64_t label) const {
        Rng mixer(state_ ^ (0x94d049bb133111ebULL * (label + 1)));
        return Rng(mixer.next_u64());
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

}  // namespace pfr
