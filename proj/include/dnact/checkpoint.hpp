#pragma once

// Binary checkpoints: named little-endian f32 parameter blocks plus the config
// snapshot, action-normalization statistics, and the training RNG state.
// load(save(x)) is bit-exact for every block.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dnact/diffusion.hpp"
#include "dnact/optim.hpp"
#include "dnact/tensor.hpp"

namespace dnact {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParamBlock {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::string config_text;
    std::uint64_t config_hash = 0;
    ActionNormStats stats;
    std::string rng_state;  // textual mt19937_64 state, may be empty
    std::vector<ParamBlock> blocks;

    const ParamBlock* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies every parameter of the set into named blocks.
void blocks_from_params(const ParameterSet& ps, Checkpoint& ckpt);
/// Writes matching blocks back into the set; throws on missing names or
/// shape mismatches.
void params_from_blocks(const Checkpoint& ckpt, ParameterSet& ps);

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& s);

/// FNV-1a over the raw bytes of every block, order-sensitive.
std::uint64_t param_hash(const ParameterSet& ps);

}  // namespace dnact
