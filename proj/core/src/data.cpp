#include "rae/data.hpp"

#include <array>
#include <cmath>

namespace rae {

namespace {

using Color = std::array<float, 3>;

Color random_color(Rng& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

// Foreground coverage of pixel (x, y) in [0, 1] for the class shape; coordinates
// are centered at (cx, cy) and scaled by r.
float coverage(int label, double u, double v, double r, double phase) {
    const double rad = std::sqrt(u * u + v * v);
    switch (label) {
        case 0: return rad < r ? 1.f : 0.f;
        case 1: return (std::abs(u) < r * 0.85 && std::abs(v) < r * 0.85) ? 1.f : 0.f;
        case 2: return (rad < r && rad > r * 0.55) ? 1.f : 0.f;
        case 3: return ((std::abs(u) < r * 0.3 && std::abs(v) < r) || (std::abs(v) < r * 0.3 && std::abs(u) < r)) ? 1.f : 0.f;
        case 4: return std::sin(v * 3.0 / r + phase) > 0 ? 1.f : 0.f;
        case 5: return std::sin(u * 3.0 / r + phase) > 0 ? 1.f : 0.f;
        case 6: return (std::sin(u * 2.5 / r + phase) * std::sin(v * 2.5 / r + phase)) > 0 ? 1.f : 0.f;
        case 7: return std::sin((u + v) * 2.2 / r + phase) > 0 ? 1.f : 0.f;
        case 8: return (v < r * 0.7 && v > -r && std::abs(u) < (v + r) * 0.55) ? 1.f : 0.f;
        case 9: return static_cast<float>(std::max(0.0, 1.0 - rad / (1.6 * r)));
        default: throw ContractError("toy label out of range");
    }
}

}  // namespace

Tensor make_toy_image(int label, int size, Rng& rng) {
    if (size < 4) throw ConfigError("toy images need size >= 4");
    const Color fg = random_color(rng);
    Color bg = random_color(rng);
    for (auto& c : bg) c *= 0.5f;
    const double cx = size * (0.4 + 0.2 * rng.uniform());
    const double cy = size * (0.4 + 0.2 * rng.uniform());
    const double r = size * (0.22 + 0.12 * rng.uniform());
    const double phase = 6.283185307179586 * rng.uniform();
    Tensor img({3, size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float a = coverage(label, x + 0.5 - cx, y + 0.5 - cy, r, phase);
            for (int c = 0; c < 3; ++c) img[(c * size + y) * size + x] = a * fg[c] + (1.f - a) * bg[c];
        }
    return img;
}

ImageSet make_toy_dataset(int count, int size, std::uint64_t seed) {
    if (count <= 0) throw ConfigError("toy dataset needs a positive count");
    ImageSet set;
    set.images = Tensor({count, 3, size, size});
    Rng rng(seed, 0);
    const auto per = static_cast<std::int64_t>(3) * size * size;
    for (int i = 0; i < count; ++i) {
        const int label = i % kToyClasses;
        Rng image_rng = rng.derive(static_cast<std::uint64_t>(i) + 1);
        const Tensor img = make_toy_image(label, size, image_rng);
        std::copy(img.storage().begin(), img.storage().end(), set.images.data() + i * per);
        set.labels.push_back(label);
    }
    return set;
}

}  // namespace rae
