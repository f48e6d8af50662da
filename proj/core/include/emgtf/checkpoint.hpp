#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "emgtf/model.hpp"

namespace emgtf {

// EMCK container, little-endian:
//   "EMCK" | u32 version | model spec | u64 seed | tensors (name, shape,
//   f32 values) | centroid banks (name, K, d, capacity, seed, rollovers,
//   f64 centroids) | u64 FNV-1a hash of everything before it.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    EmgtfNet<float> model;
    std::uint64_t seed = 0;
};

void save_checkpoint(const EmgtfNet<float>& model, std::uint64_t seed, const std::filesystem::path& path);

/// Throws FormatError on a corrupt file and ConfigError when `expected`
/// names a different variant than the stored one.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected = std::nullopt);

} // namespace emgtf
