#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "qtart/model.hpp"
#include "qtart/optim.hpp"

namespace qtart {

inline constexpr std::uint32_t checkpoint_version = 1;

/// State needed to continue a run exactly where it stopped.
struct TrainingState {
    OptimizerState optimizer;
    std::size_t next_epoch = 0;
    /// Original indices of retained samples once a removal mask is frozen.
    std::optional<std::vector<std::size_t>> retained;
};

struct Checkpoint {
    Model model;
    std::optional<TrainingState> state;
};

/// Layout (little endian):
///   "QTCK" u32 version u32 layer_count
///   u32 in_channels u32 in_h u32 in_w u32 classes
///   u32 norm_channels, f64 mean[..], f64 std[..]
///   per layer: u32 kind u32 pad u32 window
///              [u32 rank u32 dims.. (weight), u32 rank u32 dims.. (bias),
///               f32 weight.., f32 bias..]          (dense/conv2d only)
///   u8 has_state
///   [f64 lr f64 momentum f64 decay u32 buffers {u32 rank u32 dims.. f32 ..}
///    u64 next_epoch u8 has_retained [u64 count u64 idx..]]
std::vector<std::uint8_t> encode_checkpoint(const Model& model, const TrainingState* state = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainingState* state = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qtart
