#pragma once

#include <map>
#include <string>

#include "flowik/flow.hpp"
#include "flowik/training.hpp"

namespace flowik {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  /// Chain document the model was trained for (serialize_chain output).
  std::string chain_document;
  /// Free-form training metadata (config values, batch count, ...).
  std::map<std::string, std::string> training;
};

struct LoadedCheckpoint {
  FlowModel model;
  CheckpointInfo info;
};

/// Layout:
///   "FLOWIKCK" | u32 version | u64 len + JSON header | u64 count |
///   u32 crc32(weights) | count little-endian doubles
/// The header records chain name, D, cond_dim, layer count, permutation
/// maps and seeds, per-layer net shapes, s_clamp and the training metadata.
/// Weights are written per coupling layer, per dense layer, weight matrix in
/// row-major order followed by the bias. Round trips are bit-exact.
void save_checkpoint(const FlowModel& model, const std::string& path,
                     const CheckpointInfo& info = {});
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Optimizer sidecar: Adam moments, counters and learning rate.
void save_optimizer_state(const TrainState& state, const std::string& path);
TrainState load_optimizer_state(const std::string& path, const FlowModel& model);

}  // namespace flowik
