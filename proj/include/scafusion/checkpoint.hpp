#pragma once

// Checkpoints: manifest.json (names, shapes, offsets, per-tensor hashes,
// trainable flags, config snapshot) next to params.bin (little-endian 32-bit
// floats). Loads are bit-exact and integrity-checked per tensor.

#include <string>

#include "scafusion/config.hpp"
#include "scafusion/param.hpp"

namespace scafusion {

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& dir, const ParamStoreF& store, const RunConfig& cfg);

// Loads into an already-built store; every manifest tensor must exist with
// the same shape. Restores values and trainable flags.
void load_checkpoint(const std::string& dir, ParamStoreF& store);

RunConfig checkpoint_config(const std::string& dir);

}  // namespace scafusion
