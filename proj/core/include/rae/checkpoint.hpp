#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rae/optim.hpp"

namespace rae {

// ema <- beta * ema + (1 - beta) * params, matched by index.
void ema_update(std::vector<Tensor>& ema, const ParamList<float>& params, double beta);
void ema_update(Tensor& ema, const Tensor& param, double beta);

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "RAECKPT\0", u32 version, u64 step, u64 tensor
// count; per tensor u32 name length, name bytes, u32 rank, rank x i64
// extents, raw f32 values; then u64 length and the config text.
struct Checkpoint {
    std::int64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string config_text;

    const Tensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws LoadError carrying the byte offset of the first bad field.
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rae
