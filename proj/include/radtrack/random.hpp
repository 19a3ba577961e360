#pragma once

#include <cstdint>
#include <string_view>

namespace radtrack {

/// SplitMix64: a small, fully specified generator so that dropout masks and
/// weight initialisation are bit-reproducible across standard libraries.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

/// Deterministic seed mixing for deriving sub-streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    SplitMix64 g(base ^ (salt * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
    g();
    return g();
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view salt) {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (unsigned char ch : salt) {
        h ^= ch;
        h *= 0x100000001B3ull;
    }
    return derive_seed(base, h);
}

}  // namespace radtrack
