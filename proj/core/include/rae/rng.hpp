#pragma once

#include <array>
#include <cstdint>

#include "rae/tensor.hpp"

namespace rae {

// Counter-based generator (Philox4x32-10). The key is derived from
// (seed, stream) so independent streams can be created without sharing state;
// output is a pure function of (key, counter).
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    // New generator keyed by (seed, stream_id); does not advance this one.
    Rng derive(std::uint64_t stream_id) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    // Standard normal via Box-Muller; caches the second variate.
    double normal();

   private:
    std::array<std::uint32_t, 4> block(std::uint64_t counter) const;

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

template <typename T>
BasicTensor<T> randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
    BasicTensor<T> out(shape);
    for (auto& v : out.storage()) v = static_cast<T>(stddev * rng.normal());
    return out;
}

template <typename T>
BasicTensor<T> rand_uniform(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    BasicTensor<T> out(shape);
    for (auto& v : out.storage()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return out;
}

}  // namespace rae
