#include "rae/rae.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rae/dit.hpp"

namespace rae {

namespace {

void require_images(const Tensor& images, const char* who) {
    if (images.rank() != 4) throw DimensionError(std::string(who) + ": expected [B, C, H, W], got " + shape_string(images.shape()));
}

std::int64_t square_side(std::int64_t tokens) {
    const auto side = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    if (side * side != tokens) throw DimensionError("token count " + std::to_string(tokens) + " is not a square grid");
    return side;
}

// Orthonormal rows when rows <= cols, orthonormal columns otherwise.
Tensor semi_orthogonal(std::int64_t rows, std::int64_t cols, Rng& rng) {
    const bool by_rows = rows <= cols;
    const auto count = by_rows ? rows : cols;
    const auto len = by_rows ? cols : rows;
    std::vector<std::vector<double>> basis;
    while (static_cast<std::int64_t>(basis.size()) < count) {
        std::vector<double> v(static_cast<std::size_t>(len));
        for (auto& x : v) x = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                double dot = 0.0;
                for (std::int64_t i = 0; i < len; ++i) dot += v[i] * b[i];
                for (std::int64_t i = 0; i < len; ++i) v[i] -= dot * b[i];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;
        for (auto& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    Tensor out({rows, cols});
    for (std::int64_t k = 0; k < count; ++k)
        for (std::int64_t i = 0; i < len; ++i) {
            const auto v = static_cast<float>(basis[k][i]);
            if (by_rows) out.at(k, i) = v;
            else out.at(i, k) = v;
        }
    return out;
}

}  // namespace

Tensor patchify(const Tensor& images, std::int64_t p) {
    require_images(images, "patchify");
    const auto b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (p <= 0 || h % p != 0 || w % p != 0) {
        throw DimensionError("patchify: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch " +
                             std::to_string(p));
    }
    const auto gh = h / p, gw = w / p, cols = c * p * p;
    Tensor out({b * gh * gw, cols});
    for (std::int64_t n = 0; n < b; ++n)
        for (std::int64_t gy = 0; gy < gh; ++gy)
            for (std::int64_t gx = 0; gx < gw; ++gx) {
                float* dst = out.data() + ((n * gh + gy) * gw + gx) * cols;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    for (std::int64_t y = 0; y < p; ++y)
                        for (std::int64_t x = 0; x < p; ++x)
                            *dst++ = images[((n * c + ch) * h + gy * p + y) * w + gx * p + x];
            }
    return out;
}

Tensor unpatchify(const Tensor& patches, std::int64_t batch, std::int64_t c, std::int64_t p) {
    if (batch <= 0 || patches.rows() % batch != 0 || patches.cols() != c * p * p) {
        throw DimensionError("unpatchify: patch matrix " + shape_string(patches.shape()) + " does not match layout");
    }
    const auto side = square_side(patches.rows() / batch);
    const auto h = side * p;
    Tensor out({batch, c, h, h});
    for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t gy = 0; gy < side; ++gy)
            for (std::int64_t gx = 0; gx < side; ++gx) {
                const float* src = patches.data() + ((n * side + gy) * side + gx) * c * p * p;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    for (std::int64_t y = 0; y < p; ++y)
                        for (std::int64_t x = 0; x < p; ++x)
                            out[((n * c + ch) * h + gy * p + y) * h + gx * p + x] = *src++;
            }
    return out;
}

Tensor avg_pool2(const Tensor& images) {
    require_images(images, "avg_pool2");
    const auto b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (h % 2 || w % 2) throw DimensionError("avg_pool2: odd resolution");
    Tensor out({b, c, h / 2, w / 2});
    for (std::int64_t plane = 0; plane < b * c; ++plane)
        for (std::int64_t y = 0; y < h / 2; ++y)
            for (std::int64_t x = 0; x < w / 2; ++x) {
                const float* s = images.data() + plane * h * w;
                out[(plane * (h / 2) + y) * (w / 2) + x] =
                    0.25f * (s[(2 * y) * w + 2 * x] + s[(2 * y) * w + 2 * x + 1] + s[(2 * y + 1) * w + 2 * x] +
                             s[(2 * y + 1) * w + 2 * x + 1]);
            }
    return out;
}

Tensor upsample2(const Tensor& images) {
    require_images(images, "upsample2");
    const auto b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor out({b, c, 2 * h, 2 * w});
    for (std::int64_t plane = 0; plane < b * c; ++plane)
        for (std::int64_t y = 0; y < 2 * h; ++y)
            for (std::int64_t x = 0; x < 2 * w; ++x)
                out[(plane * 2 * h + y) * 2 * w + x] = images[(plane * h + y / 2) * w + x / 2];
    return out;
}

FrozenEncoder::FrozenEncoder(const EncoderConfig& config) : config_(config) {
    if (config.channels <= 0 || config.patch_size <= 0 || config.token_dim < 2) {
        throw ConfigError("encoder needs positive channels and patch size and token_dim >= 2");
    }
    Rng rng(config.seed, 0);
    const std::int64_t in = static_cast<std::int64_t>(config.channels) * config.patch_size * config.patch_size;
    patch_weight_ = semi_orthogonal(in, config.token_dim, rng);
    // Patch pixels are centered before projection; scale so tokens have O(1) entries.
    const float gain = static_cast<float>(std::sqrt(static_cast<double>(config.token_dim) / static_cast<double>(in)) * 2.0);
    for (auto& v : patch_weight_.storage()) v *= gain;
    mix_weight_ = semi_orthogonal(config.token_dim, config.token_dim, rng);
    for (auto& v : mix_weight_.storage()) v *= static_cast<float>(config.mix_gain);
    mix_bias_ = randn<float>({config.token_dim}, rng, 0.5);
}

std::int64_t FrozenEncoder::tokens_for(std::int64_t height, std::int64_t width) const {
    const auto p = config_.patch_size;
    if (height % p != 0 || width % p != 0) throw DimensionError("image size is not divisible by the encoder patch size");
    return (height / p) * (width / p);
}

Tensor FrozenEncoder::encode(const Tensor& images) const {
    const bool single = images.rank() == 3;
    const Tensor batch = single ? images.reshaped({1, images.dim(0), images.dim(1), images.dim(2)}) : images;
    require_images(batch, "encode");
    if (batch.dim(1) != config_.channels) throw DimensionError("encode: channel count does not match the encoder");
    const auto b = batch.dim(0);
    const auto n = tokens_for(batch.dim(2), batch.dim(3));
    Tensor patches = patchify(batch, config_.patch_size);
    for (auto& v : patches.storage()) v -= 0.5f;
    Tensor z = matmul(patches, patch_weight_);
    const Tensor pre = matmul(z, mix_weight_);
    const auto d = z.cols();
    for (std::int64_t r = 0; r < z.rows(); ++r)
        for (std::int64_t c = 0; c < d; ++c) z.at(r, c) += std::tanh(pre.at(r, c) + mix_bias_[c]);
    Tensor tokens = layer_norm_no_affine(z, static_cast<float>(nn::kNormEps));
    return single ? tokens.reshaped({n, d}) : tokens.reshaped({b, n, d});
}

std::uint64_t FrozenEncoder::weight_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const Tensor& t) {
        for (float v : t.storage()) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int k = 0; k < 4; ++k) {
                h ^= (bits >> (8 * k)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
    };
    mix(patch_weight_);
    mix(mix_weight_);
    mix(mix_bias_);
    return h;
}

Decoder::Decoder(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
    if (config.patch_size <= 0 || config.width <= 0 || config.depth < 0 || config.width % config.num_heads != 0) {
        throw ConfigError("invalid decoder configuration");
    }
    Rng rng(seed, 0);
    input_ = nn::Linear<float>(config.token_dim, config.width, rng);
    if (config.cls_token) cls_ = Var<float>::parameter(randn<float>({1, config.width}, rng, 0.02));
    for (int i = 0; i < config.depth; ++i) blocks_.emplace_back(config.width, config.num_heads, config.mlp_ratio, rng);
    const auto px = static_cast<std::int64_t>(config.channels) * config.patch_size * config.patch_size;
    output_ = nn::Linear<float>(config.width, px, rng);
    if (config.upsample_patch > 0) {
        const auto up = static_cast<std::int64_t>(config.channels) * config.upsample_patch * config.upsample_patch;
        upsample_output_ = nn::Linear<float>(config.width, up, rng);
    }
}

Var<float> Decoder::trunk(const Var<float>& tokens, std::int64_t batch) const {
    if (tokens.value().cols() != config_.token_dim || batch <= 0 || tokens.value().rows() % batch != 0) {
        throw DimensionError("decoder: tokens " + shape_string(tokens.shape()) + " do not match the configuration");
    }
    const auto n = tokens.value().rows() / batch;
    square_side(n);
    auto x = ad::add_cyclic(input_(tokens), Var<float>::constant(sincos_positions<float>(n, config_.width)));
    std::int64_t group = n;
    if (config_.cls_token) {
        x = ad::prepend_row(x, cls_, n);
        group = n + 1;
    }
    for (const auto& block : blocks_) x = block(x, batch);
    x = ad::layer_norm(x, static_cast<float>(nn::kNormEps));
    if (config_.cls_token) x = ad::slice_rows_grouped(x, group, 1, n);
    return x;
}

Var<float> Decoder::decode_patches(const Var<float>& tokens, std::int64_t batch, bool upsampled) const {
    if (upsampled && !upsample_output_) throw ConfigError("decoder has no upsampling head");
    const auto h = trunk(tokens, batch);
    return upsampled ? (*upsample_output_)(h) : output_(h);
}

Tensor Decoder::decode(const Tensor& tokens, bool upsampled) const {
    const auto batch = tokens.rank() == 3 ? tokens.dim(0) : 1;
    const auto flat = tokens.reshaped({tokens.numel() / config_.token_dim, config_.token_dim});
    const auto patches = decode_patches(Var<float>::constant(flat), batch, upsampled).value();
    return unpatchify(patches, batch, config_.channels, upsampled ? config_.upsample_patch : config_.patch_size);
}

ParamList<float> Decoder::parameters() const {
    ParamList<float> out;
    input_.collect("dec.input", out);
    if (config_.cls_token) out.push_back({"dec.cls", cls_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("dec.blocks." + std::to_string(i), out);
    output_.collect("dec.output", out);
    if (upsample_output_) upsample_output_->collect("dec.upsample_output", out);
    return out;
}

Tensor noise_augment(const Tensor& z, const NoiseAugConfig& cfg, Rng& rng) {
    if (cfg.tau < 0.0) throw ConfigError("noise augmentation tau must be non-negative");
    Tensor out = z;
    if (cfg.tau == 0.0 || z.numel() == 0) return out;
    const auto samples = z.rank() >= 2 ? z.dim(0) : 1;
    const auto per = z.numel() / samples;
    for (std::int64_t s = 0; s < samples; ++s) {
        const double sigma = std::abs(cfg.tau * rng.normal());
        float* d = out.data() + s * per;
        for (std::int64_t i = 0; i < per; ++i) d[i] += static_cast<float>(sigma * rng.normal());
    }
    return out;
}

Var<float> reconstruction_loss(const Var<float>& xhat, const Var<float>& x, const ReconWeights& weights,
                               const LossTerm& perceptual, const LossTerm& adversarial, double gan_lambda) {
    auto loss = ad::l1(xhat, x);
    if (perceptual) loss = ad::add(loss, ad::scale(perceptual(xhat, x), static_cast<float>(weights.perceptual)));
    if (adversarial) {
        loss = ad::add(loss, ad::scale(adversarial(xhat, x), static_cast<float>(weights.adversarial * gan_lambda)));
    }
    return loss;
}

double adaptive_gan_weight(double grad_norm_rec, double grad_norm_adv, double eps) {
    if (!(eps > 0.0)) throw DomainError("adaptive_gan_weight: eps must be positive");
    if (grad_norm_rec < 0.0 || grad_norm_adv < 0.0) throw DomainError("adaptive_gan_weight: norms must be non-negative");
    return std::clamp(grad_norm_rec / (grad_norm_adv + eps), 0.0, 1e4);
}

double reconstruction_l1(const Tensor& images, const Tensor& latents, const Decoder& decoder, double sigma, Rng& rng,
                         int chunk) {
    require_images(images, "reconstruction_l1");
    const auto count = images.dim(0);
    const auto per_image = images.numel() / count;
    const auto per_latent = latents.numel() / count;
    double total = 0.0;
    for (std::int64_t start = 0; start < count; start += chunk) {
        const auto b = std::min<std::int64_t>(chunk, count - start);
        Tensor z({b, latents.dim(1), latents.dim(2)});
        std::copy_n(latents.data() + start * per_latent, b * per_latent, z.data());
        if (sigma > 0.0)
            for (auto& v : z.storage()) v += static_cast<float>(sigma * rng.normal());
        const Tensor rec = decoder.decode(z);
        if (rec.numel() != b * per_image) throw DimensionError("reconstruction_l1: decoder output resolution differs");
        for (std::int64_t i = 0; i < rec.numel(); ++i) total += std::abs(rec[i] - images[start * per_image + i]);
    }
    return total / static_cast<double>(images.numel());
}

DecoderTrainResult train_decoder(const Tensor& images, const FrozenEncoder& encoder, Decoder& decoder,
                                 const NoiseAugConfig& noise, const DecoderTrainConfig& cfg) {
    require_images(images, "train_decoder");
    const auto hash_before = encoder.weight_hash();
    const auto& dc = decoder.config();
    const auto& ec = encoder.config();
    if (dc.token_dim != ec.token_dim) throw ConfigError("decoder token_dim does not match the encoder");
    const auto count = images.dim(0);
    const auto c = images.dim(1);

    const Tensor latents = encoder.encode(images);
    const auto n = latents.dim(1), d = latents.dim(2);
    // Targets at the decoder's output resolution: H * p_d / p_e.
    Tensor targets = images;
    if (dc.patch_size != ec.patch_size) {
        if (dc.patch_size != 2 * ec.patch_size) throw ConfigError("decoder patch size must equal p_e or 2 p_e");
        targets = upsample2(images);
    }
    const Tensor target_patches = patchify(targets, dc.patch_size);
    Tensor up_patches;
    if (dc.upsample_patch > 0) up_patches = patchify(upsample2(targets), dc.upsample_patch);

    const auto params = decoder.parameters();
    AdamState<float> adam;
    adam.config.lr = cfg.lr;
    Rng rng(cfg.seed, 11);
    DecoderTrainResult result;
    const auto eval_count = std::min<std::int64_t>(cfg.eval_images, count);
    Tensor eval_images({eval_count, c, targets.dim(2), targets.dim(3)});
    std::copy_n(targets.data(), eval_images.numel(), eval_images.data());
    Tensor eval_latents({eval_count, n, d});
    std::copy_n(latents.data(), eval_latents.numel(), eval_latents.data());

    const auto tp = target_patches.cols();
    const auto up = dc.upsample_patch > 0 ? up_patches.cols() : 0;
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor z({cfg.batch, n, d});
        Tensor tgt({cfg.batch * n, tp});
        Tensor tgt_up;
        if (up) tgt_up = Tensor({cfg.batch * n, up});
        for (int b = 0; b < cfg.batch; ++b) {
            const auto idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(count)));
            std::copy_n(latents.data() + idx * n * d, n * d, z.data() + b * n * d);
            std::copy_n(target_patches.data() + idx * n * tp, n * tp, tgt.data() + b * n * tp);
            if (up) std::copy_n(up_patches.data() + idx * n * up, n * up, tgt_up.data() + b * n * up);
        }
        const Tensor zin = noise_augment(z, noise, rng).reshaped({cfg.batch * n, d});
        const auto tokens = Var<float>::constant(zin);
        auto loss = reconstruction_loss(decoder.decode_patches(tokens, cfg.batch), Var<float>::constant(tgt));
        if (up) loss = ad::add(loss, ad::l1(decoder.decode_patches(tokens, cfg.batch, true), Var<float>::constant(tgt_up)));
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw ExperimentError("decoder training diverged at step " + std::to_string(step));
        zero_grad(params);
        backward(loss);
        adam_step(params, adam);
        result.loss_history.push_back(value);
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            Rng eval_rng(cfg.seed, 12);
            result.eval_l1.push_back(reconstruction_l1(eval_images, eval_latents, decoder, 0.0, eval_rng));
        }
    }
    if (encoder.weight_hash() != hash_before) throw InvariantViolation("encoder weights changed during decoder training");
    return result;
}

namespace {

constexpr char kDatasetMagic[4] = {'R', 'A', 'E', 'D'};
constexpr char kLabelMagic[4] = {'L', 'B', 'L', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
    unsigned char bytes[sizeof(U)];
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    const auto raw = std::bit_cast<Raw>(v);
    for (std::size_t k = 0; k < sizeof(U); ++k) bytes[k] = static_cast<unsigned char>((raw >> (8 * k)) & 0xffu);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

class ByteReader {
   public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

    void expect_bytes(const char* bytes, std::size_t n, const char* what) {
        need(n, what);
        if (std::memcmp(data_.data() + pos_, bytes, n) != 0) throw LoadError(std::string("bad ") + what, pos_);
        pos_ += n;
    }
    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
        Raw raw = 0;
        for (std::size_t k = 0; k < sizeof(U); ++k)
            raw |= static_cast<Raw>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
        pos_ += sizeof(U);
        return std::bit_cast<U>(raw);
    }

   private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n) throw LoadError(std::string("truncated while reading ") + what, pos_);
    }
    std::string data_;
    std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const ImageSet& set) {
    require_images(set.images, "write_dataset");
    if (!set.labels.empty() && static_cast<std::int64_t>(set.labels.size()) != set.images.dim(0)) {
        throw DimensionError("write_dataset: label count differs from image count");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kDatasetMagic, 4);
    put_le<std::uint32_t>(out, kDatasetVersion);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(set.images.dim(0)));
    for (int axis = 1; axis < 4; ++axis) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.images.dim(axis)));
    for (float v : set.images.storage()) put_le<float>(out, v);
    if (!set.labels.empty()) {
        out.write(kLabelMagic, 4);
        for (int l : set.labels) put_le<std::int32_t>(out, l);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

ImageSet read_dataset(const std::filesystem::path& path) {
    ByteReader in(slurp(path));
    in.expect_bytes(kDatasetMagic, 4, "dataset magic");
    const auto version_at = in.offset();
    if (in.get<std::uint32_t>("version") != kDatasetVersion) throw LoadError("unsupported dataset version", version_at);
    const auto count = in.get<std::uint64_t>("count");
    const auto c = in.get<std::uint32_t>("channels");
    const auto h = in.get<std::uint32_t>("height");
    const auto w = in.get<std::uint32_t>("width");
    const auto numel = count * c * h * w;
    if (numel * 4 > in.remaining()) throw LoadError("truncated pixel body", in.offset());
    ImageSet set;
    set.images = Tensor({static_cast<std::int64_t>(count), c, h, w});
    for (auto& v : set.images.storage()) v = in.get<float>("pixels");
    if (!in.done()) {
        in.expect_bytes(kLabelMagic, 4, "label block magic");
        set.labels.resize(count);
        for (auto& l : set.labels) l = in.get<std::int32_t>("labels");
        if (!in.done()) throw LoadError("trailing bytes after label block", in.offset());
    }
    return set;
}

Tensor ingest_u8(std::span<const std::uint8_t> pixels, int height, int width, int channels) {
    if (height <= 0 || width <= 0 || channels <= 0 ||
        pixels.size() != static_cast<std::size_t>(height) * width * channels) {
        throw DimensionError("ingest_u8: pixel buffer does not match the given grid");
    }
    Tensor out({channels, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                out[(static_cast<std::int64_t>(c) * height + y) * width + x] =
                    static_cast<float>(pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]) / 255.0f;
    return out;
}

Tensor read_netpbm(const std::filesystem::path& path) {
    const std::string data = slurp(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const auto start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        if (start == pos) throw LoadError("truncated netpbm header", start);
        return data.substr(start, pos - start);
    };
    const auto magic = token();
    int channels = 0;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else throw LoadError("unsupported netpbm magic " + magic, 0);
    const int width = std::stoi(token());
    const int height = std::stoi(token());
    const int maxval = std::stoi(token());
    if (maxval != 255) throw LoadError("only 8-bit netpbm files are supported", pos);
    ++pos;  // single whitespace before the raster
    const auto bytes = static_cast<std::size_t>(width) * height * channels;
    if (data.size() < pos + bytes) throw LoadError("truncated netpbm raster", data.size());
    return ingest_u8({reinterpret_cast<const std::uint8_t*>(data.data() + pos), bytes}, height, width, channels);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) throw DimensionError("write_ppm: expected [3|1, H, W]");
    const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const float v = std::clamp(image[(ch * h + y) * w + x], 0.0f, 1.0f);
                out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
            }
}

}  // namespace rae
