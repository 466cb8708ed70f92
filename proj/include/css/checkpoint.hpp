#pragma once

#include <string>

#include "css/param_store.hpp"

namespace css {

/// Binary checkpoint: magic, version, config digest, the config JSON itself,
/// then the named parameter tensors in registry order as little-endian 64-bit
/// floats. The embedded config lets `eval` rebuild the model without a
/// separate config file.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamStore& store);

struct CheckpointData {
  std::string config_json;
  std::uint64_t config_digest = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;  // registry order
};

CheckpointData load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into an existing store; names, order and shapes
/// must match exactly.
void restore_params(const CheckpointData& data, ParamStore& store);

}  // namespace css
