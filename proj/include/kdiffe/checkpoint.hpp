#pragma once

#include <filesystem>

#include "kdiffe/model.hpp"

namespace kdiffe {

/// Binary checkpoint: magic, format version, config text, schedule, tables,
/// denoiser, RNG states and epoch count. Doubles are stored as raw IEEE bits,
/// so a save/load round trip is bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// Throws DataError for a missing, truncated or foreign file and for an
/// unsupported version.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace kdiffe
