// Command-line driver: collect / pretrain / train / eval / render / ablate.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "dnact/image_io.hpp"
#include "dnact/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dnact;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out = "runs";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string tasks;
    bool lfs = false, no_diffusion = false, actions_from_diffusion = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--seed", args.seed, "override the config seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--tasks", args.tasks, "pre-training suite: in|ood");
    cmd->add_flag("--lfs", args.lfs, "learn from scratch (no pre-trained features)");
    cmd->add_flag("--no-diffusion", args.no_diffusion, "drop the diffusion objective");
    cmd->add_flag("--actions-from-diffusion", args.actions_from_diffusion,
                  "decode actions from the diffusion sampler at eval time");
    cmd->add_option("--out", args.out, "output directory");
}

Config resolve_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config{} : load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    if (!args.tasks.empty()) cfg.tasks = args.tasks;
    if (args.lfs) cfg.lfs = true;
    if (args.no_diffusion) cfg.no_diffusion = true;
    if (args.actions_from_diffusion) cfg.actions_from_diffusion = true;
    cfg.validate();
    return cfg;
}

std::string corpus_dir(const CommonArgs& args) { return (fs::path(args.out) / "corpus").string(); }

int cmd_collect(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    fs::create_directories(args.out);
    auto entries = collect_corpus(cfg, corpus_dir(args));
    std::cout << "collected " << entries.size() << " episodes into " << corpus_dir(args) << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    fs::create_directories(args.out);
    auto corpus = cfg.tasks == "in" ? load_corpus(corpus_dir(args)) : std::vector<sim::Demonstration>{};
    auto scenes = pretrain_scene_set(cfg, corpus);
    auto bundle = make_encoder_bundle(cfg, cfg.seed);
    MetricsLog log((fs::path(args.out) / "pretrain_metrics.log").string());
    auto outcome = run_pretrain(cfg, scenes, bundle, &log);
    const auto path = (fs::path(args.out) / ("encoder_" + cfg.tasks + ".ckpt")).string();
    save_encoder_checkpoint(path, cfg, bundle);
    std::cout << "pretrained encoder -> " << path << " (holdout PSNR " << outcome.holdout_psnr
              << " dB)\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    fs::create_directories(args.out);
    auto corpus = load_corpus(corpus_dir(args));
    const auto stats = compute_norm_stats(corpus);

    std::optional<EncoderBundle> frozen;
    if (!cfg.lfs) {
        const auto enc_path = (fs::path(args.out) / ("encoder_" + cfg.tasks + ".ckpt")).string();
        frozen = load_encoder_bundle(enc_path, cfg);
    }
    auto bundle = make_policy_bundle(cfg, cfg.seed);
    bundle.stats = stats;
    auto examples = build_examples(cfg, corpus, frozen ? &*frozen : nullptr, stats);
    MetricsLog log((fs::path(args.out) / "train_metrics.log").string());
    const auto ckpt_path = (fs::path(args.out) / "policy.ckpt").string();
    try {
        run_train(cfg, examples, bundle, frozen ? &*frozen : nullptr, &log, ckpt_path);
    } catch (const NonFiniteLoss& e) {
        std::cerr << "training aborted: " << e.what() << " (component: " << e.component
                  << "); last checkpoint kept at " << ckpt_path << "\n";
        return 1;
    }
    std::cout << "trained policy -> " << ckpt_path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt, const std::string& encoder_path,
             int episodes) {
    Config cfg = config_from_checkpoint(ckpt);
    if (args.seed_set) cfg.seed = args.seed;
    if (episodes > 0) cfg.eval_episodes = episodes;
    if (args.actions_from_diffusion) cfg.actions_from_diffusion = true;
    cfg.validate();
    auto bundle = load_policy_bundle(ckpt, cfg);
    std::optional<EncoderBundle> frozen;
    if (!cfg.lfs) {
        auto path = encoder_path;
        if (path.empty()) path = (fs::path(args.out) / ("encoder_" + cfg.tasks + ".ckpt")).string();
        frozen = load_encoder_bundle(path, cfg);
    }
    auto rows = evaluate(cfg, frozen ? &*frozen : nullptr, bundle, cfg.seed);
    fs::create_directories(args.out);
    std::vector<std::vector<std::string>> tsv;
    for (const auto& r : rows)
        tsv.push_back({sim::task_name(r.task), std::to_string(r.successes),
                       std::to_string(r.episodes), std::to_string(r.rate())});
    write_tsv((fs::path(args.out) / "eval.tsv").string(), {"task", "successes", "episodes", "rate"},
              tsv);
    for (const auto& r : rows)
        std::cout << sim::task_name(r.task) << ": " << r.successes << "/" << r.episodes << "\n";
    std::cout << "average: " << average_rate(rows) << "\n";
    return 0;
}

int cmd_render(const CommonArgs& args, const std::string& ckpt, std::uint64_t scene_seed,
               const std::string& task_name_arg) {
    Config cfg = config_from_checkpoint(ckpt);
    auto bundle = load_encoder_bundle(ckpt, cfg);
    const auto task = sim::task_from_name(task_name_arg);
    auto scene = sim::generate_scene(task, scene_seed);
    auto pscene = make_pretrain_scene(scene);
    auto grid = voxelize<float>(pscene.points, pscene.colors, bundle.vcfg);
    auto volume = bundle.encoder(grid);
    const auto cam = sim::holdout_camera();
    std::vector<float> rgb, feat, depth;
    render_image(volume, bundle.heads, bundle.vcfg, cam, 64, rgb, feat, &depth);
    fs::create_directories(args.out);
    write_ppm((fs::path(args.out) / "render_rgb.ppm").string(), rgb, cam.height, cam.width);
    write_ppm((fs::path(args.out) / "render_feat_pca.ppm").string(),
              feature_pca_image(feat, cam.height, cam.width, sim::kFeatureDim), cam.height,
              cam.width);
    write_raster((fs::path(args.out) / "render_depth.dnr").string(), depth, cam.height, cam.width,
                 1);
    auto gt = sim::render_ground_truth(scene, cam);
    std::cout << "novel-view PSNR: " << psnr_rgb(rgb, gt.rgb) << " dB\n";
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    const auto cfg = resolve_config(args);
    MetricsLog log((fs::path(args.out) / "ablate_metrics.log").string());
    auto table = run_ablation(cfg, args.out, &log);
    for (const auto& row : table) std::cout << row.variant << "\t" << row.avg << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale 3D semantic-field manipulation pipeline"};
    app.require_subcommand(1);
    CommonArgs args;

    auto* collect = app.add_subcommand("collect", "record scripted-expert demonstrations");
    add_common(collect, args);
    auto* pretrain = app.add_subcommand("pretrain", "pre-train the volume encoder");
    add_common(pretrain, args);
    auto* train = app.add_subcommand("train", "jointly train policy + diffusion heads");
    add_common(train, args);

    auto* eval = app.add_subcommand("eval", "closed-loop evaluation of a policy checkpoint");
    std::string eval_ckpt, eval_encoder;
    int eval_episodes = 0;
    eval->add_option("checkpoint", eval_ckpt, "policy checkpoint")->required();
    eval->add_option("--encoder", eval_encoder, "encoder checkpoint (default: <out>/encoder_<tasks>.ckpt)");
    eval->add_option("--episodes", eval_episodes, "episodes per task");
    add_common(eval, args);

    auto* render = app.add_subcommand("render", "render a novel view from an encoder checkpoint");
    std::string render_ckpt, render_task = "push_to_target";
    std::uint64_t render_seed = 0;
    render->add_option("checkpoint", render_ckpt, "encoder checkpoint")->required();
    render->add_option("--scene-seed", render_seed, "scene variation seed");
    render->add_option("--task", render_task, "task providing the scene");
    add_common(render, args);

    auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
    add_common(ablate, args);

    CLI11_PARSE(app, argc, argv);
    try {
        if (collect->parsed()) return cmd_collect(args);
        if (pretrain->parsed()) return cmd_pretrain(args);
        if (train->parsed()) return cmd_train(args);
        if (eval->parsed()) return cmd_eval(args, eval_ckpt, eval_encoder, eval_episodes);
        if (render->parsed()) return cmd_render(args, render_ckpt, render_seed, render_task);
        if (ablate->parsed()) return cmd_ablate(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
