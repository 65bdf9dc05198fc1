#pragma once

// Flat key=value run configuration shared by every subcommand. Unknown keys
// are rejected so a typo cannot silently fall back to a default.

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dnact {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Config {
    // representation sizes
    int grid = 32;       // voxel resolution G
    int d_v = 16;        // volume feature width
    int m_points = 256;  // point samples per observation

    // diffusion
    int diffusion_steps = 50;

    // corpus
    int demos_per_task = 50;
    int expert_retries = 20;

    // pre-training
    int pretrain_steps = 2000;
    int pretrain_scenes = 12;
    int ray_batch = 512;
    int n_samples = 32;
    float pretrain_lr = 5e-4f;

    // policy training
    int train_steps = 5000;
    int batch = 8;
    int point_variants = 4;   // point-cloud sampling draws per keyframe example
    float shift_aug = 0.04f;  // table-plane shift augmentation amplitude (m)
    float lr = 1e-3f;
    float weight_decay = 1e-6f;
    float lambda_trans = 300.0f;
    float lambda_rot = 1.0f;
    float lambda_open = 1.0f;
    float lambda_collide = 1.0f;
    float lambda_diff = 5.0f;
    float lambda_feat = 0.01f;
    int eval_every = 1000;

    // evaluation
    int eval_episodes = 25;
    int max_keyframes = 8;

    std::uint64_t seed = 1;
    std::string tasks = "in";  // in | ood (pre-training suite)
    bool lfs = false;
    bool no_diffusion = false;
    bool actions_from_diffusion = false;

    void validate() const;
    /// Applies one key=value assignment; throws ConfigError on unknown keys
    /// or unparseable values.
    void set(const std::string& key, const std::string& value);
    /// Canonical serialization (sorted keys, one per line).
    std::string serialize() const;
    std::uint64_t hash() const;
};

/// Parses flat key=value text ('#' comments and blank lines allowed).
Config parse_config(const std::string& text);
Config load_config(const std::string& path);

}  // namespace dnact
