#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace hyperlora {

// Counter-based deterministic random stream. Every draw is a pure function of
// (seed, counter), so identical seeds and call sequences produce identical
// values on every platform and the stream can be checkpointed by storing the
// counter. Mixing is SplitMix64.
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

    // Independent child stream; the salt keeps sibling streams decorrelated.
    Rng stream(uint64_t salt) const { return Rng(mix(seed_ ^ mix(salt + 0x9e3779b97f4a7c15ull))); }

    uint64_t next_u64() { return mix(seed_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1) with 24 bits of mantissa, exact in float.
    float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller. One value per call; the mate is discarded to keep the
    // counter-to-value mapping stateless.
    float normal() {
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        double r = std::sqrt(-2.0 * std::log(static_cast<double>(u1)));
        return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(u2)));
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t counter_;
};

// Stable 64-bit hash for deriving per-name parameter streams (FNV-1a).
inline uint64_t hash_name(const char* s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (; *s; ++s) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(*s));
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t hash_name(const std::string& s) { return hash_name(s.c_str()); }

}  // namespace hyperlora
