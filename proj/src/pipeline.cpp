#include "dnact/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "dnact/voxel.hpp"

namespace dnact {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

DiffusionSchedule make_schedule(int K) {
    // the default endpoint only drives alpha_bar below 1% for long schedules
    return K == 50 ? DiffusionSchedule::linear()
                   : DiffusionSchedule::linear(K, 0.02, 0.95);
}

/// Raw 8-dim action of a demonstration frame: xyz, three (identically zero)
/// rotation angles for the orientation-free gripper, open flag, and the
/// contact label (closed gripper implies expected contact).
std::array<float, kActionDim> raw_action(const sim::Frame& f) {
    const float open = f.open > 0.5f ? 1.0f : 0.0f;
    return {f.pose.x, f.pose.y, f.pose.z, 0.0f, 0.0f, 0.0f, open, 1.0f - open};
}

void gather_samples(const sim::Observation& obs, int m, std::mt19937_64& rng,
                    std::vector<sim::Vec3>& pts, std::vector<sim::Vec3>& colors) {
    auto idx = farthest_point_indices(obs.points, m, rng);
    pts.resize(idx.size());
    colors.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        pts[i] = obs.points[static_cast<size_t>(idx[i])];
        colors[i] = obs.colors[static_cast<size_t>(idx[i])];
    }
}

std::vector<float> frozen_features(const EncoderBundle& b, const sim::Observation& obs,
                                   const std::vector<sim::Vec3>& pts) {
    auto grid = voxelize<float>(obs.points, obs.colors, b.vcfg);
    auto volume = b.encoder(grid);
    auto v_s = query_points(volume, pts, b.vcfg);
    return {v_s.data(), v_s.data() + v_s.numel()};
}

LossWeights weights_from(const Config& cfg) {
    LossWeights w;
    w.trans = cfg.lambda_trans;
    w.rot = cfg.lambda_rot;
    w.open = cfg.lambda_open;
    w.collide = cfg.lambda_collide;
    w.diff = cfg.no_diffusion ? 0.0f : cfg.lambda_diff;
    return w;
}

void check_structural_match(const Config& embedded, const Config& cfg) {
    if (embedded.grid != cfg.grid || embedded.d_v != cfg.d_v ||
        embedded.m_points != cfg.m_points || embedded.diffusion_steps != cfg.diffusion_steps)
        throw CheckpointError("checkpoint: structural config mismatch");
}

struct FusedOut {
    Tensor v_f;
};

/// Observation -> v_f for one rollout step; rngs are derived from ep_seed so
/// rollouts are deterministic.
Tensor fuse_observation(const Config& cfg, const EncoderBundle* frozen,
                        const PolicyBundle& bundle, const sim::Observation& obs,
                        std::uint64_t ep_seed, int step) {
    std::mt19937_64 prng(mix(ep_seed, 100 + static_cast<std::uint64_t>(step)));
    std::vector<sim::Vec3> pts, colors;
    gather_samples(obs, cfg.m_points, prng, pts, colors);
    Tensor v_s;
    if (frozen && !cfg.lfs) {
        auto data = frozen_features(*frozen, obs, pts);
        v_s = Tensor::from_data({cfg.m_points, cfg.d_v}, std::move(data));
    } else {
        v_s = Tensor::zeros({cfg.m_points, cfg.d_v});
    }
    std::mt19937_64 erng(mix(ep_seed, 200 + static_cast<std::uint64_t>(step)));
    auto v_p = bundle.points(pts, colors, erng);
    std::mt19937_64 frng(mix(ep_seed, 300 + static_cast<std::uint64_t>(step)));
    return bundle.fusion(v_p, v_s, obs.proprio, obs.lang_embed, frng);
}

sim::Scene eval_scene(sim::TaskId task, std::uint64_t ep_seed) {
    for (int attempt = 0; attempt < 50; ++attempt) {
        try {
            return sim::generate_scene(task, mix(ep_seed, 900 + static_cast<std::uint64_t>(attempt)));
        } catch (const sim::PlacementError&) {
        }
    }
    throw DatasetError("eval: could not place a scene");
}

bool rollout(const Config& cfg, const EncoderBundle* frozen, const PolicyBundle& bundle,
             sim::TaskId task, std::uint64_t ep_seed) {
    auto scene = eval_scene(task, ep_seed);
    sim::GripperState gripper;
    const auto sched = make_schedule(cfg.diffusion_steps);
    for (int step = 0; step < cfg.max_keyframes; ++step) {
        auto obs = sim::make_observation(scene, gripper, sim::training_cameras());
        auto v_f = fuse_observation(cfg, frozen, bundle, obs, ep_seed, step);
        sim::Vec3 target;
        bool open = true;
        if (cfg.actions_from_diffusion) {
            std::mt19937_64 drng(mix(ep_seed, 400 + static_cast<std::uint64_t>(step)));
            auto seq = sample_actions(bundle.noise, sched, v_f, bundle.stats, drng);
            target = {seq.at(0, 0), seq.at(1, 0), seq.at(2, 0)};
            open = seq.at(6, 0) > 0.5f;
        } else {
            auto a = select_action(bundle.policy(v_f));
            target = a.trans;
            open = a.open == 1;
        }
        sim::execute_keyframe(gripper, target, open, scene);
        if (sim::check_success(scene, task)) return true;
    }
    return false;
}

PolicyBundle clone_policy(const Config& cfg, const PolicyBundle& src) {
    Checkpoint snap;
    PolicyBundle shallow = src;
    ParameterSet ps;
    policy_params(shallow, ps);
    blocks_from_params(ps, snap);
    auto out = make_policy_bundle(cfg, 0);
    ParameterSet dst;
    policy_params(out, dst);
    params_from_blocks(snap, dst);
    out.stats = src.stats;
    return out;
}

EncoderBundle clone_encoder(const Config& cfg, const EncoderBundle& src) {
    Checkpoint snap;
    EncoderBundle shallow = src;
    ParameterSet ps;
    encoder_params(shallow, ps);
    blocks_from_params(ps, snap);
    auto out = make_encoder_bundle(cfg, 0);
    ParameterSet dst;
    encoder_params(out, dst);
    params_from_blocks(snap, dst);
    return out;
}

}  // namespace

int worker_threads() {
    if (const char* env = std::getenv("DNACT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

EncoderBundle make_encoder_bundle(const Config& cfg, std::uint64_t init_seed) {
    std::mt19937_64 rng(mix(init_seed, 11));
    EncoderBundle b;
    b.vcfg = VoxelConfig{cfg.grid, cfg.d_v, sim::default_workspace()};
    b.encoder = VoxelEncoder<float>(b.vcfg, rng);
    b.heads = FieldHeads(cfg.d_v, sim::kFeatureDim, rng);
    return b;
}

PolicyBundle make_policy_bundle(const Config& cfg, std::uint64_t init_seed) {
    std::mt19937_64 rng(mix(init_seed, 13));
    PolicyBundle b;
    b.points = PointEncoder(rng);
    b.fusion = Fusion(cfg.d_v, rng);
    b.policy = PolicyHeads(kFusedDim, rng);
    b.noise = NoisePredictor(kFusedDim, rng);
    return b;
}

void encoder_params(EncoderBundle& b, ParameterSet& ps) {
    b.encoder.collect(ps, "enc");
    b.heads.collect(ps, "heads");
}

void policy_params(PolicyBundle& b, ParameterSet& ps) {
    b.points.collect(ps, "points");
    b.fusion.collect(ps, "fuse");
    b.policy.collect(ps, "policy");
    b.noise.collect(ps, "noise");
}

void save_encoder_checkpoint(const std::string& path, const Config& cfg, EncoderBundle& b) {
    Checkpoint ckpt;
    ckpt.config_text = cfg.serialize();
    ckpt.config_hash = cfg.hash();
    ParameterSet ps;
    encoder_params(b, ps);
    blocks_from_params(ps, ckpt);
    save_checkpoint(path, ckpt);
}

EncoderBundle load_encoder_bundle(const std::string& path, const Config& cfg) {
    auto ckpt = load_checkpoint(path);
    auto embedded = parse_config(ckpt.config_text);
    if (embedded.hash() != ckpt.config_hash)
        throw CheckpointError("checkpoint: config hash mismatch in " + path);
    check_structural_match(embedded, cfg);
    auto b = make_encoder_bundle(cfg, 0);
    ParameterSet ps;
    encoder_params(b, ps);
    params_from_blocks(ckpt, ps);
    return b;
}

void save_policy_checkpoint(const std::string& path, const Config& cfg, PolicyBundle& b,
                            const std::mt19937_64& rng) {
    Checkpoint ckpt;
    ckpt.config_text = cfg.serialize();
    ckpt.config_hash = cfg.hash();
    ckpt.stats = b.stats;
    ckpt.rng_state = rng_to_string(rng);
    ParameterSet ps;
    policy_params(b, ps);
    blocks_from_params(ps, ckpt);
    save_checkpoint(path, ckpt);
}

PolicyBundle load_policy_bundle(const std::string& path, const Config& cfg) {
    auto ckpt = load_checkpoint(path);
    auto embedded = parse_config(ckpt.config_text);
    if (embedded.hash() != ckpt.config_hash)
        throw CheckpointError("checkpoint: config hash mismatch in " + path);
    check_structural_match(embedded, cfg);
    auto b = make_policy_bundle(cfg, 0);
    ParameterSet ps;
    policy_params(b, ps);
    params_from_blocks(ckpt, ps);
    b.stats = ckpt.stats;
    return b;
}

Config config_from_checkpoint(const std::string& path) {
    auto ckpt = load_checkpoint(path);
    auto cfg = parse_config(ckpt.config_text);
    if (cfg.hash() != ckpt.config_hash)
        throw CheckpointError("checkpoint: config hash mismatch in " + path);
    return cfg;
}

std::vector<sim::Scene> pretrain_scene_set(const Config& cfg,
                                           const std::vector<sim::Demonstration>& corpus) {
    std::vector<sim::Scene> scenes;
    if (cfg.tasks == "ood") {
        for (int i = 0; i < cfg.pretrain_scenes; ++i) {
            const auto task = sim::kOodTasks[static_cast<size_t>(i) % sim::kOodTasks.size()];
            for (int attempt = 0; attempt < 50; ++attempt) {
                try {
                    scenes.push_back(sim::generate_scene(
                        task, mix(cfg.seed, 7000 + static_cast<std::uint64_t>(i * 64 + attempt))));
                    break;
                } catch (const sim::PlacementError&) {
                }
            }
        }
    } else {
        if (corpus.empty()) throw DatasetError("pretrain: empty corpus");
        // round-robin over tasks so every class appears early
        std::vector<std::vector<const sim::Demonstration*>> by_task(sim::kDeskTasks.size());
        for (const auto& d : corpus)
            for (size_t t = 0; t < sim::kDeskTasks.size(); ++t)
                if (d.task == sim::kDeskTasks[t]) by_task[t].push_back(&d);
        for (int i = 0; static_cast<int>(scenes.size()) < cfg.pretrain_scenes; ++i) {
            const auto& bucket = by_task[static_cast<size_t>(i) % by_task.size()];
            if (bucket.empty()) continue;
            const size_t slot = static_cast<size_t>(i) / by_task.size();
            if (slot >= bucket.size()) break;
            scenes.push_back(bucket[slot]->scene0);
        }
    }
    if (scenes.empty()) throw DatasetError("pretrain: no scenes available");
    return scenes;
}

PretrainOutcome run_pretrain(const Config& cfg, const std::vector<sim::Scene>& scenes,
                             EncoderBundle& bundle, MetricsLog* log) {
    std::vector<PretrainScene> corpus;
    corpus.reserve(scenes.size());
    for (const auto& s : scenes) corpus.push_back(make_pretrain_scene(s));

    PretrainConfig pcfg;
    pcfg.steps = cfg.pretrain_steps;
    pcfg.ray_batch = cfg.ray_batch;
    pcfg.n_samples = cfg.n_samples;
    pcfg.lr = cfg.pretrain_lr;
    pcfg.weight_decay = cfg.weight_decay;
    pcfg.lambda_feat = cfg.lambda_feat;
    pcfg.seed = cfg.seed;

    PretrainOutcome out;
    out.curve = pretrain(corpus, bundle.encoder, bundle.heads, bundle.vcfg, pcfg);
    if (log)
        for (size_t i = 0; i < out.curve.size(); i += 100)
            log->log(static_cast<std::int64_t>(i), {{"recon_loss", out.curve[i]}});

    // held-out-view PSNR on the first training scene
    const auto& probe = scenes.front();
    auto grid = voxelize<float>(corpus.front().points, corpus.front().colors, bundle.vcfg);
    auto volume = bundle.encoder(grid);
    const auto cam = sim::holdout_camera();
    std::vector<float> rgb, feat;
    render_image(volume, bundle.heads, bundle.vcfg, cam, 2 * cfg.n_samples, rgb, feat);
    auto gt = sim::render_ground_truth(probe, cam);
    out.holdout_psnr = psnr_rgb(rgb, gt.rgb);
    if (log)
        log->log(static_cast<std::int64_t>(out.curve.size()),
                 {{"holdout_psnr", out.holdout_psnr}});
    return out;
}

ActionNormStats compute_norm_stats(const std::vector<sim::Demonstration>& corpus) {
    ActionNormStats st;
    st.lo.fill(std::numeric_limits<float>::infinity());
    st.hi.fill(-std::numeric_limits<float>::infinity());
    bool any = false;
    for (const auto& demo : corpus) {
        for (size_t k : extract_keyframes(demo)) {
            const auto a = raw_action(demo.frames[k]);
            for (int d = 0; d < kActionDim; ++d) {
                st.lo[static_cast<size_t>(d)] = std::min(st.lo[static_cast<size_t>(d)], a[static_cast<size_t>(d)]);
                st.hi[static_cast<size_t>(d)] = std::max(st.hi[static_cast<size_t>(d)], a[static_cast<size_t>(d)]);
            }
            any = true;
        }
    }
    if (!any) throw DatasetError("norm stats: no keyframes in corpus");
    return st;
}

std::vector<TrainExample> build_examples(const Config& cfg,
                                         const std::vector<sim::Demonstration>& corpus,
                                         const EncoderBundle* frozen,
                                         const ActionNormStats& stats) {
    std::vector<TrainExample> out;
    for (size_t di = 0; di < corpus.size(); ++di) {
        const auto& demo = corpus[di];
        const auto keys = extract_keyframes(demo);
        for (size_t j = 0; j < keys.size(); ++j) {
            const size_t obs_frame = j == 0 ? 0 : keys[j - 1];
            auto scene = sim::scene_at_frame(demo, obs_frame);
            sim::GripperState gripper;
            gripper.pos = demo.frames[obs_frame].pose;
            gripper.open = demo.frames[obs_frame].open;
            auto obs = sim::make_observation(scene, gripper, sim::training_cameras());

            // Rollouts resample the point cloud every step, so train on
            // several sampling draws per keyframe; a single fixed draw lets
            // the policy memorize that subset and miss by centimeters on any
            // other one. The encoder volume is shared across draws.
            std::optional<Tensor> volume;
            if (frozen && !cfg.lfs) {
                auto grid = voxelize<float>(obs.points, obs.colors, frozen->vcfg);
                volume = frozen->encoder(grid);
            }

            const auto& target = demo.frames[keys[j]];
            for (int v = 0; v < cfg.point_variants; ++v) {
                TrainExample ex;
                std::mt19937_64 rng(
                    mix(cfg.seed, 5000 + di * 1024 + j * 16 + static_cast<size_t>(v)));
                gather_samples(obs, cfg.m_points, rng, ex.pts, ex.colors);
                if (volume) {
                    auto v_s = query_points(*volume, ex.pts, frozen->vcfg);
                    ex.v_s.assign(v_s.data(), v_s.data() + v_s.numel());
                } else {
                    ex.v_s.assign(static_cast<size_t>(cfg.m_points) * cfg.d_v, 0.0f);
                }

                // The task is translation-equivariant in the table plane and
                // a point's semantic feature is unchanged by a global shift,
                // so extra variants shift geometry, proprioception, and
                // labels together. This covers object placements between the
                // ones the corpus happened to sample. Variant 0 stays exact.
                sim::Vec3 delta{0, 0, 0};
                if (v > 0) {
                    std::uniform_real_distribution<float> u(-cfg.shift_aug, cfg.shift_aug);
                    delta = {u(rng), u(rng), 0.0f};
                }
                for (auto& p : ex.pts) p = p + delta;
                ex.proprio = obs.proprio;
                ex.proprio[0] += delta.x;
                ex.proprio[1] += delta.y;
                ex.lang = obs.lang_embed;
                ex.y.trans = target.pose + delta;
                ex.y.rot = {0, 0, 0};
                ex.y.open = target.open > 0.5f ? 1 : 0;
                ex.y.collide = 1 - ex.y.open;
                for (int t = 0; t < kSeqLen; ++t) {
                    const size_t kk = keys[std::min(j + static_cast<size_t>(t), keys.size() - 1)];
                    auto a = raw_action(demo.frames[kk]);
                    a[0] += delta.x;
                    a[1] += delta.y;
                    for (int d = 0; d < kActionDim; ++d)
                        ex.seq.at(d, t) = stats.normalize(d, a[static_cast<size_t>(d)]);
                    ex.seq.valid[static_cast<size_t>(t)] = j + static_cast<size_t>(t) < keys.size();
                }
                out.push_back(std::move(ex));
            }
        }
    }
    if (out.empty()) throw DatasetError("build_examples: empty corpus");
    return out;
}

TrainOutcome run_train(const Config& cfg, const std::vector<TrainExample>& examples,
                       PolicyBundle& bundle, EncoderBundle* frozen, MetricsLog* log,
                       const std::string& checkpoint_path) {
    ParameterSet params;
    policy_params(bundle, params);
    ParameterSet enc_params;
    if (frozen) encoder_params(*frozen, enc_params);

    const auto sched = make_schedule(cfg.diffusion_steps);
    const auto w = weights_from(cfg);
    std::mt19937_64 rng(mix(cfg.seed, 17));
    std::uniform_int_distribution<size_t> pick(0, examples.size() - 1);

    TrainOutcome out;
    for (int step = 0; step < cfg.train_steps; ++step) {
        std::vector<Tensor> losses;
        losses.reserve(static_cast<size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& ex = examples[pick(rng)];
            auto v_s = Tensor::from_data({cfg.m_points, cfg.d_v}, ex.v_s);
            std::mt19937_64 erng(rng());
            auto v_p = bundle.points(ex.pts, ex.colors, erng);
            std::mt19937_64 frng(rng());
            auto v_f = bundle.fusion(v_p, v_s, ex.proprio, ex.lang, frng);
            losses.push_back(
                combined_loss(bundle.policy, bundle.noise, sched, v_f, ex.seq, ex.y, w, rng));
        }
        auto loss = scale(sum(concat(losses, 0)), 1.0f / static_cast<float>(cfg.batch));
        loss.backward();
        // Cosine decay to 5% of the base rate. The translation term is an L1
        // sum whose gradient magnitude does not shrink near the optimum, so a
        // constant rate leaves Adam jittering at a precision floor set by lr.
        const float prog = static_cast<float>(step) / static_cast<float>(cfg.train_steps);
        const float lr = cfg.lr * (0.05f + 0.95f * 0.5f * (1.0f + std::cos(3.14159265f * prog)));
        params.adam_step(lr, cfg.weight_decay);
        out.final_loss = loss.data()[0];

        const bool log_step = (step + 1) % 100 == 0 || step + 1 == cfg.train_steps;
        if (log_step) {
            out.encoder_grad_norm = frozen ? enc_params.grad_norm() : 0.0f;
            if (out.encoder_grad_norm != 0.0f)
                throw std::logic_error("train: frozen encoder received gradient");
            if (log)
                log->log(step + 1, {{"loss", out.final_loss},
                                    {"encoder_grad_norm", out.encoder_grad_norm}});
        }
        if ((step + 1) % std::max(cfg.eval_every, 1) == 0 || step + 1 == cfg.train_steps) {
            if (!checkpoint_path.empty()) save_policy_checkpoint(checkpoint_path, cfg, bundle, rng);
            if (log) {
                // cheap success probe: a few fresh episodes per task
                std::vector<std::pair<std::string, double>> probe;
                const int n_probe = std::min(5, cfg.eval_episodes);
                for (size_t t = 0; t < sim::kDeskTasks.size(); ++t) {
                    int ok = 0;
                    for (int e = 0; e < n_probe; ++e)
                        ok += rollout(cfg, frozen, bundle, sim::kDeskTasks[t],
                                      mix(cfg.seed, 600000ull + static_cast<std::uint64_t>(step) * 64 +
                                                        t * 16 + static_cast<std::uint64_t>(e)))
                                  ? 1
                                  : 0;
                    probe.emplace_back("success_" + sim::task_name(sim::kDeskTasks[t]),
                                       static_cast<double>(ok) / n_probe);
                }
                log->log(step + 1, probe);
            }
        }
    }
    return out;
}

std::vector<EvalRow> evaluate(const Config& cfg, const EncoderBundle* frozen,
                              const PolicyBundle& bundle, std::uint64_t eval_seed) {
    struct Job {
        sim::TaskId task;
        size_t task_idx;
        std::uint64_t ep_seed;
    };
    std::vector<Job> jobs;
    for (size_t t = 0; t < sim::kDeskTasks.size(); ++t)
        for (int e = 0; e < cfg.eval_episodes; ++e)
            jobs.push_back({sim::kDeskTasks[t], t,
                            mix(eval_seed, t * 100000ull + static_cast<std::uint64_t>(e))});

    const int n_threads = std::min<int>(worker_threads(), static_cast<int>(jobs.size()));
    std::vector<std::array<std::atomic<int>, 2>> tallies(sim::kDeskTasks.size());
    for (auto& t : tallies) {
        t[0] = 0;
        t[1] = 0;
    }
    std::atomic<size_t> next{0};
    auto worker = [&] {
        auto my_policy = clone_policy(cfg, bundle);
        std::optional<EncoderBundle> my_encoder;
        if (frozen && !cfg.lfs) my_encoder = clone_encoder(cfg, *frozen);
        for (size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            const auto& job = jobs[i];
            const bool ok = rollout(cfg, my_encoder ? &*my_encoder : nullptr, my_policy,
                                    job.task, job.ep_seed);
            tallies[job.task_idx][0] += ok ? 1 : 0;
            tallies[job.task_idx][1] += 1;
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::vector<EvalRow> rows;
    for (size_t t = 0; t < sim::kDeskTasks.size(); ++t)
        rows.push_back({sim::kDeskTasks[t], tallies[t][0].load(), tallies[t][1].load()});
    return rows;
}

std::vector<EvalRow> evaluate_random(const Config& cfg, std::uint64_t eval_seed) {
    const auto ws = sim::default_workspace();
    std::vector<EvalRow> rows;
    for (size_t t = 0; t < sim::kDeskTasks.size(); ++t) {
        EvalRow row{sim::kDeskTasks[t], 0, 0};
        for (int e = 0; e < cfg.eval_episodes; ++e) {
            const std::uint64_t ep_seed =
                mix(eval_seed, t * 100000ull + static_cast<std::uint64_t>(e));
            auto scene = eval_scene(row.task, ep_seed);
            sim::GripperState gripper;
            std::mt19937_64 rng(mix(ep_seed, 31));
            std::uniform_real_distribution<float> ux(ws.lo.x, ws.hi.x), uy(ws.lo.y, ws.hi.y),
                uz(ws.lo.z, ws.hi.z), coin(0.0f, 1.0f);
            bool ok = false;
            for (int step = 0; step < cfg.max_keyframes && !ok; ++step) {
                sim::execute_keyframe(gripper, {ux(rng), uy(rng), uz(rng)}, coin(rng) > 0.5f,
                                      scene);
                ok = sim::check_success(scene, row.task);
            }
            row.successes += ok ? 1 : 0;
            ++row.episodes;
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<AblationRow> run_ablation(const Config& base, const std::string& out_dir,
                                      MetricsLog* log) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto corpus_dir = (fs::path(out_dir) / "corpus").string();
    if (!fs::exists(fs::path(corpus_dir) / "manifest.tsv")) collect_corpus(base, corpus_dir);
    auto corpus = load_corpus(corpus_dir);
    const auto stats = compute_norm_stats(corpus);

    auto encoder_for = [&](const std::string& suite) {
        Config cfg = base;
        cfg.tasks = suite;
        const auto path = (fs::path(out_dir) / ("encoder_" + suite + ".ckpt")).string();
        if (fs::exists(path)) return load_encoder_bundle(path, cfg);
        auto bundle = make_encoder_bundle(cfg, cfg.seed);
        run_pretrain(cfg, pretrain_scene_set(cfg, corpus), bundle, nullptr);
        save_encoder_checkpoint(path, cfg, bundle);
        return bundle;
    };
    auto enc_in = encoder_for("in");
    auto enc_ood = encoder_for("ood");

    const std::uint64_t eval_seed = mix(base.seed, 0xE7A1);
    auto train_and_eval = [&](const std::string& variant, Config cfg, EncoderBundle* enc,
                              bool eval_from_diffusion) {
        cfg.validate();
        auto bundle = make_policy_bundle(cfg, cfg.seed);
        bundle.stats = stats;
        auto examples = build_examples(cfg, corpus, enc, stats);
        run_train(cfg, examples, bundle, enc, nullptr);
        Config eval_cfg = cfg;
        eval_cfg.actions_from_diffusion = eval_from_diffusion;
        AblationRow row;
        row.variant = variant;
        row.rows = evaluate(eval_cfg, enc, bundle, eval_seed);
        row.avg = average_rate(row.rows);
        if (log) log->log(static_cast<std::int64_t>(0), {{variant, row.avg}});
        return std::make_pair(row, std::move(bundle));
    };

    std::vector<AblationRow> table;
    auto [full_row, full_bundle] = train_and_eval("full", base, &enc_in, false);
    table.push_back(full_row);

    Config no_diff = base;
    no_diff.no_diffusion = true;
    table.push_back(train_and_eval("no_diffusion", no_diff, &enc_in, false).first);

    Config lfs = base;
    lfs.lfs = true;
    table.push_back(train_and_eval("lfs", lfs, nullptr, false).first);

    {
        AblationRow row;
        row.variant = "ood_pretrain";
        Config cfg = base;
        auto bundle = make_policy_bundle(cfg, cfg.seed);
        bundle.stats = stats;
        auto examples = build_examples(cfg, corpus, &enc_ood, stats);
        run_train(cfg, examples, bundle, &enc_ood, nullptr);
        row.rows = evaluate(cfg, &enc_ood, bundle, eval_seed);
        row.avg = average_rate(row.rows);
        table.push_back(row);
    }

    {
        // same trained full model, actions decoded from the diffusion sampler
        AblationRow row;
        row.variant = "actions_from_diffusion";
        Config cfg = base;
        cfg.actions_from_diffusion = true;
        row.rows = evaluate(cfg, &enc_in, full_bundle, eval_seed);
        row.avg = average_rate(row.rows);
        table.push_back(row);
    }

    std::vector<std::vector<std::string>> tsv_rows;
    for (const auto& row : table) {
        std::vector<std::string> r{row.variant, std::to_string(row.avg)};
        for (const auto& er : row.rows) r.push_back(std::to_string(er.rate()));
        tsv_rows.push_back(std::move(r));
    }
    std::vector<std::string> header{"variant", "avg"};
    for (auto task : sim::kDeskTasks) header.push_back(sim::task_name(task));
    write_tsv((fs::path(out_dir) / "ablation.tsv").string(), header, tsv_rows);
    return table;
}

float average_rate(const std::vector<EvalRow>& rows) {
    if (rows.empty()) return 0.0f;
    float s = 0;
    for (const auto& r : rows) s += r.rate();
    return s / static_cast<float>(rows.size());
}

}  // namespace dnact
