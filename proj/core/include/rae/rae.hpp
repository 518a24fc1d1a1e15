#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rae/nn.hpp"
#include "rae/optim.hpp"

namespace rae {

// Images are planar [C, H, W] (or [B, C, H, W]) floats, nominally in [0, 1].

// [B, C, H, W] -> [B*N, C*p*p] with N = (H/p)(W/p), row-major over the patch grid.
Tensor patchify(const Tensor& images, std::int64_t patch);
// Inverse of patchify for square grids: [B*N, C*p*p] -> [B, C, H, W].
Tensor unpatchify(const Tensor& patches, std::int64_t batch, std::int64_t channels, std::int64_t patch);
// 2x2 mean pooling of [B, C, H, W].
Tensor avg_pool2(const Tensor& images);
// Nearest-neighbour 2x upsampling of [B, C, H, W].
Tensor upsample2(const Tensor& images);

struct EncoderConfig {
    int channels = 3;
    int patch_size = 4;
    int token_dim = 64;
    double mix_gain = 1.5;  // pre-activation scale of the tanh mixing layer
    std::uint64_t seed = 17;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Frozen synthetic representation encoder: a semi-orthogonal patch map, one
// fixed tanh mixing layer with a residual path, then per-token normalization
// without affine parameters.
class FrozenEncoder {
   public:
    explicit FrozenEncoder(const EncoderConfig& config = {});

    // [C, H, W] -> [N, d]; [B, C, H, W] -> [B, N, d].
    Tensor encode(const Tensor& images) const;
    std::int64_t tokens_for(std::int64_t height, std::int64_t width) const;
    const EncoderConfig& config() const { return config_; }
    // FNV-1a over every frozen weight byte.
    std::uint64_t weight_hash() const;

    const Tensor& patch_weight() const { return patch_weight_; }
    const Tensor& mix_weight() const { return mix_weight_; }

   private:
    EncoderConfig config_;
    Tensor patch_weight_;  // [C*p*p x d]
    Tensor mix_weight_;    // [d x d]
    Tensor mix_bias_;      // [d]
};

struct DecoderConfig {
    int token_dim = 64;
    int channels = 3;
    int patch_size = 4;  // p_d
    int width = 64;
    int depth = 2;
    int num_heads = 4;
    double mlp_ratio = 2.0;
    bool cls_token = true;
    int upsample_patch = 0;  // extra output head with this patch size when > 0

    friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

// ViT decoder: tokens -> width, fixed positional table, optional learnable
// class token (dropped after the blocks), per-token linear to pixels.
class Decoder {
   public:
    Decoder(const DecoderConfig& config, std::uint64_t seed);

    // tokens [B*N, d] -> patches [B*N, C*p*p] of the main head (or the
    // upsampling head when `upsampled`).
    Var<float> decode_patches(const Var<float>& tokens, std::int64_t batch, bool upsampled = false) const;
    // tokens [N, d] or [B, N, d] -> images [B, C, H', W'].
    Tensor decode(const Tensor& tokens, bool upsampled = false) const;

    ParamList<float> parameters() const;
    const DecoderConfig& config() const { return config_; }

   private:
    Var<float> trunk(const Var<float>& tokens, std::int64_t batch) const;

    DecoderConfig config_;
    nn::Linear<float> input_;
    Var<float> cls_;
    std::vector<nn::Block<float>> blocks_;
    nn::Linear<float> output_;
    std::optional<nn::Linear<float>> upsample_output_;
};

struct NoiseAugConfig {
    double tau = 0.8;
};

// One sigma ~ |N(0, tau^2)| per sample (leading axis), z + sigma * N(0, I).
Tensor noise_augment(const Tensor& z, const NoiseAugConfig& cfg, Rng& rng);

struct ReconWeights {
    double perceptual = 1.0;   // omega_L
    double adversarial = 0.75; // omega_G
};

using LossTerm = std::function<Var<float>(const Var<float>& xhat, const Var<float>& x)>;

// L1 plus optional perceptual and adversarial terms. `gan_lambda` multiplies
// the adversarial term (see adaptive_gan_weight).
Var<float> reconstruction_loss(const Var<float>& xhat, const Var<float>& x, const ReconWeights& weights = {},
                               const LossTerm& perceptual = {}, const LossTerm& adversarial = {},
                               double gan_lambda = 0.0);

// ||grad rec|| / (||grad adv|| + eps), clamped to [0, 1e4].
double adaptive_gan_weight(double grad_norm_rec, double grad_norm_adv, double eps = 1e-4);

struct DecoderTrainConfig {
    int steps = 3000;
    int batch = 16;
    double lr = 1e-3;
    int eval_every = 0;  // 0 disables the periodic evaluation
    int eval_images = 32;
    std::uint64_t seed = 0;
};

struct DecoderTrainResult {
    std::vector<double> loss_history;
    std::vector<double> eval_l1;  // clean-latent per-pixel L1 at each eval point
};

// Trains on noise_augment(encode(x)). Throws InvariantViolation when the
// encoder's weights change during training.
DecoderTrainResult train_decoder(const Tensor& images, const FrozenEncoder& encoder, Decoder& decoder,
                                 const NoiseAugConfig& noise, const DecoderTrainConfig& cfg);

// Mean per-pixel L1 of decode(latents + sigma * N(0, I)) against images.
double reconstruction_l1(const Tensor& images, const Tensor& latents, const Decoder& decoder, double sigma, Rng& rng,
                         int chunk = 32);

// Planar float dataset: "RAED" magic, u32 version, u64 count, u32 C, H, W,
// then count*C*H*W little-endian float32 values. Labeled sets append "LBLS"
// and count int32 class ids.
struct ImageSet {
    Tensor images;            // [count, C, H, W]
    std::vector<int> labels;  // empty when unlabeled
};

void write_dataset(const std::filesystem::path& path, const ImageSet& set);
ImageSet read_dataset(const std::filesystem::path& path);

// Interleaved 8-bit [H, W, C] -> planar [C, H, W] in [0, 1].
Tensor ingest_u8(std::span<const std::uint8_t> pixels, int height, int width, int channels);
// Binary PGM (P5) or PPM (P6) with maxval 255, as planar [C, H, W].
Tensor read_netpbm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

}  // namespace rae
