#pragma once

#include <string>

#include "iamnn/network.hpp"
#include "iamnn/training.hpp"

namespace iamnn {

struct CheckpointMeta {
    int64_t step = 0;
    std::string rng_state;
};

// Versioned binary format: magic "IAMN", a little-endian u32 version, then
// length-prefixed name/shape/data records for every ParamStore entry
// (parameters and buffers), optimizer slots, the step counter, RNG state and
// the canonical NetConfig text for compatibility checks.
template <typename T>
void save_checkpoint(const std::string& path, const NetConfig& cfg, const ParamStore<T>& store,
                     const Optimizer<T>* opt, int64_t step, const std::string& rng_state);

// Parses and validates the whole file before touching the store: a bad
// magic, version, dtype, truncation, config or shape mismatch throws
// CheckpointError and leaves the network untouched.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, const NetConfig& cfg, ParamStore<T>& store,
                               Optimizer<T>* opt);

}  // namespace iamnn
