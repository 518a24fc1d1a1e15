#pragma once

#include <cstdint>

#include "rae/rae.hpp"

namespace rae {

inline constexpr int kToyClasses = 10;

// Seeded 10-class shape/texture images [count, 3, size, size] in [0, 1].
// Class ids: 0 disk, 1 square, 2 ring, 3 cross, 4 horizontal stripes,
// 5 vertical stripes, 6 checkerboard, 7 diagonal stripes, 8 triangle,
// 9 radial gradient. Colors, placement and scale vary per image.
ImageSet make_toy_dataset(int count, int size, std::uint64_t seed);

// One image of the given class.
Tensor make_toy_image(int label, int size, Rng& rng);

}  // namespace rae
