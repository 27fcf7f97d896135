#pragma once

// Single-file checkpoint: a JSON header (config, prompt manifest, named
// tensor table) followed by raw little-endian float64 payloads. Weights
// round-trip bit-exactly.

#include "specfuse/model.hpp"

#include <string>

namespace specfuse {

void save_checkpoint(const FusModel& model, const std::string& path);
void load_checkpoint(FusModel& model, const std::string& path);

}  // namespace specfuse
