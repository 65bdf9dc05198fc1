#pragma once

// Agent assembly and run orchestration: pre-training the volume encoder,
// building keyframe training examples from demonstrations, joint policy
// training, and closed-loop evaluation.

#include <optional>

#include "dnact/checkpoint.hpp"
#include "dnact/config.hpp"
#include "dnact/dataset.hpp"
#include "dnact/metrics.hpp"
#include "dnact/points.hpp"
#include "dnact/policy.hpp"
#include "dnact/renderer.hpp"

namespace dnact {

struct EncoderBundle {
    VoxelConfig vcfg;
    VoxelEncoder<float> encoder;
    FieldHeads heads;
};

struct PolicyBundle {
    PointEncoder points;
    Fusion fusion;
    PolicyHeads policy;
    NoisePredictor noise;
    ActionNormStats stats;
};

EncoderBundle make_encoder_bundle(const Config& cfg, std::uint64_t init_seed);
PolicyBundle make_policy_bundle(const Config& cfg, std::uint64_t init_seed);

void encoder_params(EncoderBundle& b, ParameterSet& ps);
void policy_params(PolicyBundle& b, ParameterSet& ps);

void save_encoder_checkpoint(const std::string& path, const Config& cfg, EncoderBundle& b);
EncoderBundle load_encoder_bundle(const std::string& path, const Config& cfg);
void save_policy_checkpoint(const std::string& path, const Config& cfg, PolicyBundle& b,
                            const std::mt19937_64& rng);
PolicyBundle load_policy_bundle(const std::string& path, const Config& cfg);

/// Config embedded in a checkpoint file; hash-checked.
Config config_from_checkpoint(const std::string& path);

/// Scenes used for field pre-training: initial scenes of corpus episodes when
/// cfg.tasks == "in", freshly generated out-of-domain scenes otherwise.
std::vector<sim::Scene> pretrain_scene_set(const Config& cfg,
                                           const std::vector<sim::Demonstration>& corpus);

struct PretrainOutcome {
    std::vector<float> curve;
    float holdout_psnr = 0.0f;
};

PretrainOutcome run_pretrain(const Config& cfg, const std::vector<sim::Scene>& scenes,
                             EncoderBundle& bundle, MetricsLog* log);

/// One (observation, next-keyframe) supervision pair with the frozen volume
/// features already baked in.
struct TrainExample {
    std::vector<sim::Vec3> pts, colors;  // m_points samples
    std::vector<float> v_s;              // m_points * d_v, zeros under lfs
    std::array<float, 4> proprio{};
    std::array<float, sim::kLangDim> lang{};
    ActionKeyframe y;    // raw world-space target
    ActionSequence seq;  // normalized next-keyframe sequence
};

/// Per-dimension min/max over the raw keyframe actions of the corpus.
ActionNormStats compute_norm_stats(const std::vector<sim::Demonstration>& corpus);

std::vector<TrainExample> build_examples(const Config& cfg,
                                         const std::vector<sim::Demonstration>& corpus,
                                         const EncoderBundle* frozen,
                                         const ActionNormStats& stats);

struct TrainOutcome {
    float final_loss = 0.0f;
    float encoder_grad_norm = 0.0f;  // asserted 0 at every logged step
};

TrainOutcome run_train(const Config& cfg, const std::vector<TrainExample>& examples,
                       PolicyBundle& bundle, EncoderBundle* frozen, MetricsLog* log,
                       const std::string& checkpoint_path = "");

struct EvalRow {
    sim::TaskId task;
    int successes = 0;
    int episodes = 0;
    float rate() const { return episodes ? static_cast<float>(successes) / episodes : 0.0f; }
};

/// Closed-loop rollouts: observe, fuse, decode, execute, up to max_keyframes
/// per episode. Episodes run in parallel on cloned model copies; results are
/// deterministic in (checkpoint, eval_seed).
std::vector<EvalRow> evaluate(const Config& cfg, const EncoderBundle* frozen,
                              const PolicyBundle& bundle, std::uint64_t eval_seed);

/// Uniform-random action baseline under the same rollout loop.
std::vector<EvalRow> evaluate_random(const Config& cfg, std::uint64_t eval_seed);

float average_rate(const std::vector<EvalRow>& rows);

/// Worker-thread cap: DNACT_THREADS, else hardware concurrency.
int worker_threads();

struct AblationRow {
    std::string variant;
    std::vector<EvalRow> rows;
    float avg = 0.0f;
};

/// Runs {full, no_diffusion, lfs, ood_pretrain, actions_from_diffusion} with a
/// shared corpus, shared pre-trained encoders, and shared seeds. Reuses
/// artifacts already present under out_dir.
std::vector<AblationRow> run_ablation(const Config& base, const std::string& out_dir,
                                      MetricsLog* log);

}  // namespace dnact
