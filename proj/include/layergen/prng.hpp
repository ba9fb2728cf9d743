#pragma once

#include <cstdint>
#include <string_view>

namespace layergen {

// Deterministic splittable PRNG (splitmix64 core). Streams derived with
// split() are independent of the parent's draw position, so parameter
// initialization does not depend on construction order.
class Prng {
public:
    explicit Prng(std::uint64_t seed) : state_(mix(seed + kGolden)) {}

    std::uint64_t next_u64() {
        state_ += kGolden;
        return mix(state_);
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform index in [0,n). Modulo bias is negligible for n << 2^64.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    // Child stream keyed by an integer tag; does not advance this stream.
    Prng split(std::uint64_t tag) const {
        Prng child(0);
        child.state_ = mix(state_ ^ mix(tag + kGolden));
        return child;
    }

    // Child stream keyed by a name (FNV-1a of the bytes).
    Prng split(std::string_view name) const { return split(fnv1a(name)); }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace layergen
