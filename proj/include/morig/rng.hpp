#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace morig {

// Counter-based generator (splitmix64 over a keyed counter). Stateless
// streams: Rng(seed, step) reproduces the same draws no matter what ran
// before, which is what makes training resumable bit-exactly.
class Rng {
  public:
    explicit Rng(uint64_t key, uint64_t counter = 0) : key_(key), ctr_(counter) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // FNV-1a; used to derive child keys from names.
    static uint64_t hash(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull) {
        uint64_t h = seed;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    Rng child(std::string_view name) const { return Rng(mix(key_ ^ hash(name))); }
    Rng child(uint64_t salt) const { return Rng(mix(key_ ^ mix(salt ^ 0xa5a5a5a55a5a5a5aull))); }

    uint64_t next_u64() { return mix(key_ ^ (0x632be59bd9b4e019ull * ++ctr_)); }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t n) { // [0, n)
        return n <= 0 ? 0 : int64_t(next_u64() % uint64_t(n));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller, two fresh uniforms per draw (no cached spare).
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    uint64_t counter() const { return ctr_; }
    uint64_t key() const { return key_; }

  private:
    uint64_t key_;
    uint64_t ctr_;
};

} // namespace morig
