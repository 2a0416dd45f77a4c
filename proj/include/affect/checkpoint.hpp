#pragma once

#include <map>
#include <string>

#include "affect/model.hpp"

namespace affect {

/// Writes the model config and every parameter and buffer to one binary
/// file. Tensor payloads are stored as raw 64-bit patterns, so a load
/// restores the model bit for bit.
void save_checkpoint(const std::string& path, Model& model);

struct CheckpointData {
  ModelConfig config;
  std::map<std::string, Tensor> state;
};

CheckpointData read_checkpoint(const std::string& path);

/// Rebuilds the model described by the checkpoint.
Model load_checkpoint(const std::string& path);

/// SHA-256 over a canonical byte encoding (sorted by name) of the given
/// parameters. Two calls agree exactly when every value bit agrees.
std::string hash_params(const ParamList& params);

}  // namespace affect
