#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rae/data.hpp"
#include "rae/rae.hpp"

using namespace rae;

namespace {

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += std::abs(double(a[i]) - double(b[i]));
    return s / double(a.numel());
}

EncoderConfig small_encoder(int patch = 4) {
    EncoderConfig e;
    e.patch_size = patch;
    e.token_dim = 64;
    return e;
}

}  // namespace

TEST_CASE("patchify round trip and pooling") {
    Rng rng(1, 0);
    const auto img = randn<float>({2, 3, 8, 8}, rng);
    const auto p = patchify(img, 4);
    CHECK(p.dim(0) == 8);
    CHECK(p.dim(1) == 48);
    CHECK(unpatchify(p, 2, 3, 4) == img);
    CHECK(avg_pool2(upsample2(img)) == img);
    CHECK_THROWS(patchify(randn<float>({1, 3, 6, 6}, rng), 4));
}

TEST_CASE("frozen encoder") {
    const FrozenEncoder enc(small_encoder());
    const auto data = make_toy_dataset(4, 32, 3);
    const auto z = enc.encode(data.images);
    CHECK(z.dim(0) == 4);
    CHECK(z.dim(1) == 64);
    CHECK(z.dim(2) == 64);
    CHECK(enc.tokens_for(32, 32) == 64);
    for (std::int64_t r = 0; r < 4 * 64; ++r) {
        double m = 0, v = 0;
        for (int k = 0; k < 64; ++k) m += z[r * 64 + k] / 64.0;
        for (int k = 0; k < 64; ++k) v += (z[r * 64 + k] - m) * (z[r * 64 + k] - m) / 64.0;
        CHECK(std::abs(m) < 1e-5);
        CHECK(std::abs(v - 1.0) < 1e-3);
    }
    CHECK(enc.encode(data.images) == z);

    // Normalizing normalized tokens changes nothing.
    auto twice = z;
    for (std::int64_t r = 0; r < 4 * 64; ++r) {
        double m = 0, v = 0;
        for (int k = 0; k < 64; ++k) m += twice[r * 64 + k] / 64.0;
        for (int k = 0; k < 64; ++k) v += (twice[r * 64 + k] - m) * (twice[r * 64 + k] - m) / 64.0;
        for (int k = 0; k < 64; ++k) twice[r * 64 + k] = float((twice[r * 64 + k] - m) / std::sqrt(v + 1e-6));
    }
    double worst = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) worst = std::max(worst, double(std::abs(twice[i] - z[i])));
    CHECK(worst < 1e-5);

    CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 3, 30, 30})), DimensionError);
    CHECK(FrozenEncoder(small_encoder()).weight_hash() == enc.weight_hash());
}

TEST_CASE("decoder shapes") {
    const FrozenEncoder enc(small_encoder());
    const auto z = enc.encode(make_toy_dataset(2, 32, 4).images);
    DecoderConfig dc;
    const Decoder same(dc, 1);
    const auto img = same.decode(z);
    CHECK(img.shape() == Shape{2, 3, 32, 32});
    for (float v : img.storage()) CHECK(std::isfinite(v));
    dc.patch_size = 8;
    CHECK(Decoder(dc, 1).decode(z).shape() == Shape{2, 3, 64, 64});
    CHECK_THROWS(same.decode(Tensor::zeros({1, 63, 64})));
}

TEST_CASE("noise augmentation") {
    Rng rng(2, 0);
    const auto z = randn<float>({10000, 4, 8}, rng);
    CHECK(noise_augment(z, {0.0}, rng) == z);
    const auto copy = z;
    const auto zp = noise_augment(z, {0.8}, rng);
    CHECK(z == copy);
    double s = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) s += double(zp[i] - z[i]) * double(zp[i] - z[i]);
    CHECK(s / double(z.numel()) == doctest::Approx(0.64).epsilon(0.05));
}

TEST_CASE("reconstruction loss and gan weight") {
    Rng rng(3, 0);
    const auto x = Var<float>::constant(randn<float>({4, 6}, rng));
    CHECK(reconstruction_loss(x, x).value().item() == 0.0f);
    auto shifted = x.value();
    for (auto& v : shifted.storage()) v += 1.0f;
    CHECK(reconstruction_loss(Var<float>::constant(shifted), x).value().item() == doctest::Approx(1.0));
    const LossTerm dummy = [](const Var<float>&, const Var<float>&) {
        return Var<float>::constant(Tensor({}, 0.25f));
    };
    const ReconWeights w{2.0, 0.75};
    CHECK(reconstruction_loss(x, x, w, dummy).value().item() == doctest::Approx(0.5));
    CHECK(reconstruction_loss(x, x, w, {}, dummy, 2.0).value().item() == doctest::Approx(0.375));

    CHECK(adaptive_gan_weight(3.0, 3.0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(adaptive_gan_weight(0.0, 2.0) == 0.0);
    CHECK(adaptive_gan_weight(1.0, 0.0, 1e-4) == 1e4);
}

TEST_CASE("decoder training") {
    const auto data = make_toy_dataset(200, 16, 5);
    const FrozenEncoder enc(small_encoder());
    DecoderConfig dc;
    dc.upsample_patch = 8;
    Decoder dec(dc, 6);
    DecoderTrainConfig tc;
    tc.steps = 1500;
    tc.eval_every = 50;
    tc.seed = 7;
    const auto hash = enc.weight_hash();
    const auto result = train_decoder(data.images, enc, dec, {0.0}, tc);
    CHECK(enc.weight_hash() == hash);

    const auto z = enc.encode(data.images);
    Rng rng(8, 0);
    const double l1 = reconstruction_l1(data.images, z, dec, 0.0, rng);
    MESSAGE("tau=0 train L1 " << l1);
    CHECK(l1 < 0.05);

    int inversions = 0;
    for (int i = 1; i < 10; ++i) inversions += result.eval_l1[i] >= result.eval_l1[i - 1];
    CHECK(inversions <= 1);

    const auto main = dec.decode(z);
    const auto pooled = avg_pool2(dec.decode(z, true));
    MESSAGE("upsampled head vs main L1 " << mean_abs_diff(pooled, main));
    CHECK(mean_abs_diff(pooled, main) < 0.1);
}

TEST_CASE("dataset files") {
    const auto dir = std::filesystem::temp_directory_path() / "rae_test_rae";
    std::filesystem::create_directories(dir);
    const auto set = make_toy_dataset(5, 8, 9);
    write_dataset(dir / "a.raed", set);
    const auto back = read_dataset(dir / "a.raed");
    CHECK(back.images == set.images);
    CHECK(back.labels == set.labels);

    std::filesystem::resize_file(dir / "a.raed", std::filesystem::file_size(dir / "a.raed") - 3);
    CHECK_THROWS(read_dataset(dir / "a.raed"));

    const std::uint8_t px[] = {0, 255, 51, 102, 0, 0};
    const auto planar = ingest_u8(px, 1, 2, 3);
    CHECK(planar.shape() == Shape{3, 1, 2});
    CHECK(planar[0] == 0.0f);
    CHECK(planar[1] == doctest::Approx(0.4));
    CHECK(planar[2] == 1.0f);

    Rng img_rng(4, 0);
    const auto img = make_toy_image(3, 8, img_rng);
    write_ppm(dir / "x.ppm", img);
    const auto read = read_netpbm(dir / "x.ppm");
    CHECK(read.shape() == img.shape());
    double worst = 0.0;
    for (std::int64_t i = 0; i < img.numel(); ++i) worst = std::max(worst, double(std::abs(read[i] - img[i])));
    CHECK(worst <= 0.5 / 255.0 + 1e-6);
    std::filesystem::remove_all(dir);
}
