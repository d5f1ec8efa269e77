#pragma once

#include <cstdint>
#include <random>

namespace sivit {

// Named sub-streams derived from one master seed. Keeping streams separate
// means e.g. skipping the shuffle pass never changes what the augmentation
// stream sees, which is what makes strategy ablations bit-comparable.
enum class RngStream : uint64_t {
    init_backbone = 1,
    init_heads = 2,
    epoch_order = 3,
    augment = 4,
    strategy = 5,
    sample = 6,
    split = 7,
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, RngStream stream, uint64_t index = 0) {
    uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<uint64_t>(stream));
    h = splitmix64(h ^ index);
    return h;
}

inline std::mt19937_64 make_rng(uint64_t seed, RngStream stream, uint64_t index = 0) {
    return std::mt19937_64(mix_seed(seed, stream, index));
}

}  // namespace sivit
