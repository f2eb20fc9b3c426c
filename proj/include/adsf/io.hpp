#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adsf/tensor.hpp"

namespace adsf {

uint32_t crc32(const unsigned char* data, size_t len, uint32_t seed = 0);

// Checkpoint: named f64 tensor sections with a manifest header and a
// whole-file CRC. Load targets an existing ParamSet and requires exact
// name/shape agreement, so a load -> save round trip is byte identical.
void save_checkpoint(const ParamSet& params, const std::string& path);
void load_checkpoint(ParamSet& params, const std::string& path);

}  // namespace adsf
