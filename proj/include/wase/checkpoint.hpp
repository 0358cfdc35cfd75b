#pragma once

#include <cstdint>
#include <string>

#include "wase/model.hpp"
#include "wase/tensor.hpp"

namespace wase {

// Serializable training position; everything needed to continue a run
// bit-identically (per-epoch randomness is derived from (seed, epoch)).
struct TrainSnapshot {
    int epoch = 0;
    double lr = 0.0;
    double best_dev = 0.0;
    int epochs_since_improve = 0;
    bool stop = false;
    bool vp_frozen = false;
    int64_t step = 0;  // optimizer steps taken
    uint64_t seed = 0;
};

// Single binary file: magic "WASE", u32 format version, u64 header length,
// canonical-JSON header {config, parameter manifest (name/shape/offset),
// optional train + adam sections}, then little-endian f64 payload:
// parameters in manifest order, followed by Adam moments when present.
void save_checkpoint(const std::string& path, const WaseModel& model,
                     const TrainSnapshot* train = nullptr, AdamOptimizer* opt = nullptr);

struct LoadedCheckpoint {
    bool has_train = false;
    bool has_optimizer = false;
    TrainSnapshot train;
};

// Fills the model's parameters (and optimizer moments when opt is given).
// The model must have been constructed with the stored config; magic,
// version, config, and every parameter name/shape are validated.
LoadedCheckpoint load_checkpoint(const std::string& path, WaseModel& model,
                                 AdamOptimizer* opt = nullptr);

// Reads only the stored ModelConfig, to construct the model before loading.
ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace wase
