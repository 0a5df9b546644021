// Deterministic random number generation for Monte Carlo ensembles.
//
// std::uniform_real_distribution is not bit-reproducible across standard
// library implementations, so the generator and the double conversion are
// spelled out here. Stream separation for parallel workers goes through
// derive_seed() in seeding.hpp, never through sequential seeds.
#pragma once

#include <array>
#include <cstdint>

namespace latwalk {

/// SplitMix64 step; used to expand a single 64-bit seed into generator state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// xoshiro256** by Blackman and Vigna. Small, fast, and passes BigCrush;
/// period 2^256-1.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(std::uint64_t seed = 0x6c078965u) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type(0); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return double((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform double in [0, 2*pi), the phase range of the stochastic map.
    double uniform_phase() { return uniform01() * 6.283185307179586476925287; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace latwalk
