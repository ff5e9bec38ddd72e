#pragma once

#include <string>

#include "parkbev/optim.hpp"

namespace parkbev {

// Checkpoint layout: "PBCKPT1\n", uint64 little-endian header length, header
// JSON {dtype, tensors:[{name, shape}]}, then the raw little-endian buffers in
// header order (names sorted ascending).
void saveCheckpoint(const ParamSet<float>& params, const std::string& path);
void saveCheckpoint(const ParamSet<double>& params, const std::string& path);

// Loads into an already-constructed parameter set. Throws ConfigError listing
// every mismatched or missing parameter.
void loadCheckpoint(ParamSet<float>& params, const std::string& path);
void loadCheckpoint(ParamSet<double>& params, const std::string& path);

}  // namespace parkbev
