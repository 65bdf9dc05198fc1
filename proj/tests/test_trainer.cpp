#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "dnact/image_io.hpp"
#include "dnact/pipeline.hpp"

using namespace dnact;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("dnact_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Config tiny_config() {
    Config cfg;
    cfg.demos_per_task = 2;
    cfg.pretrain_steps = 4;
    cfg.pretrain_scenes = 2;
    cfg.ray_batch = 32;
    cfg.n_samples = 8;
    cfg.train_steps = 4;
    cfg.batch = 2;
    cfg.m_points = 64;
    cfg.eval_episodes = 2;
    cfg.eval_every = 4;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("config: parse, defaults, unknown keys, bad values, flag rules") {
    auto cfg = parse_config("batch=4\nlr=0.01\n# comment\n\nlfs=true\ntasks=ood\n");
    CHECK(cfg.batch == 4);
    CHECK(cfg.lr == doctest::Approx(0.01f));
    CHECK(cfg.lfs);
    CHECK(cfg.tasks == "ood");
    CHECK(cfg.grid == 32);  // untouched default

    CHECK_THROWS_AS(parse_config("bacth=4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("batch=four\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("batch 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("batch=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("grid=24\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tasks=all\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lfs=true\nactions_from_diffusion=true\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("no_diffusion=true\nactions_from_diffusion=true\n"), ConfigError);

    // canonical serialization round-trips and hashes stably
    auto again = parse_config(cfg.serialize());
    CHECK(again.serialize() == cfg.serialize());
    CHECK(again.hash() == cfg.hash());
    auto other = cfg;
    other.batch = 5;
    CHECK(other.hash() != cfg.hash());
}

TEST_CASE("checkpoint: bit-exact round trip, errors on corruption") {
    const auto dir = temp_dir("ckpt");
    std::mt19937_64 rng(1);
    ParameterSet ps;
    ps.add("a.w", Tensor::uniform({7, 3}, rng, -2.f, 2.f));
    ps.add("a.b", Tensor::uniform({3}, rng, -2.f, 2.f));
    ps.add("b.w", Tensor::uniform({2, 5, 4}, rng, -2.f, 2.f));

    Checkpoint ckpt;
    ckpt.config_text = Config{}.serialize();
    ckpt.config_hash = Config{}.hash();
    ckpt.stats.lo.fill(-1.5f);
    ckpt.stats.hi.fill(2.5f);
    std::mt19937_64 state_rng(99);
    state_rng.discard(12345);
    ckpt.rng_state = rng_to_string(state_rng);
    blocks_from_params(ps, ckpt);

    const auto path = (dir / "test.ckpt").string();
    save_checkpoint(path, ckpt);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.config_text == ckpt.config_text);
    CHECK(loaded.config_hash == ckpt.config_hash);
    CHECK(loaded.stats.lo[0] == -1.5f);
    CHECK(loaded.blocks.size() == 3);
    for (size_t i = 0; i < ckpt.blocks.size(); ++i) {
        CHECK(loaded.blocks[i].name == ckpt.blocks[i].name);
        CHECK(loaded.blocks[i].shape == ckpt.blocks[i].shape);
        for (size_t j = 0; j < ckpt.blocks[i].data.size(); ++j)
            CHECK(std::memcmp(&loaded.blocks[i].data[j], &ckpt.blocks[i].data[j], 4) == 0);
    }

    // restored RNG continues the original stream
    auto restored = rng_from_string(loaded.rng_state);
    CHECK(restored() == state_rng());

    // loading back into a parameter set restores the exact values and hash
    const auto h0 = param_hash(ps);
    for (const auto& [name, unused] : ps.items()) {
        auto& t = ps.at(name);
        std::fill(t.data(), t.data() + t.numel(), 0.0f);
    }
    CHECK(param_hash(ps) != h0);
    params_from_blocks(loaded, ps);
    CHECK(param_hash(ps) == h0);

    ParameterSet extra;
    extra.add("c.w", Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(params_from_blocks(loaded, extra), CheckpointError);

    std::ofstream bad((dir / "bad.ckpt").string(), std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint((dir / "bad.ckpt").string()), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), CheckpointError);
}

TEST_CASE("episode records: round trip, determinism, format errors") {
    const auto dir = temp_dir("episodes");
    auto scene = sim::generate_scene(sim::TaskId::put_in_bin, 3);
    auto demo = sim::scripted_expert(scene, sim::TaskId::put_in_bin);

    const auto p1 = (dir / "e1.dnkt").string(), p2 = (dir / "e2.dnkt").string();
    write_episode(p1, demo);
    auto back = read_episode(p1);
    CHECK(back.task == demo.task);
    CHECK(back.variation_seed == demo.variation_seed);
    REQUIRE(back.frames.size() == demo.frames.size());
    for (size_t i = 0; i < demo.frames.size(); ++i) {
        CHECK(back.frames[i].t == demo.frames[i].t);
        CHECK(back.frames[i].pose.x == demo.frames[i].pose.x);
        CHECK(back.frames[i].open == demo.frames[i].open);
        CHECK(back.frames[i].velocity == demo.frames[i].velocity);
        REQUIRE(back.frames[i].object_centers.size() == demo.frames[i].object_centers.size());
    }
    CHECK(back.scene0.objects.size() == demo.scene0.objects.size());

    write_episode(p2, back);
    CHECK(read_text_file(p1) == read_text_file(p2));  // byte-identical re-write

    std::ofstream bad((dir / "bad.dnkt").string(), std::ios::binary);
    bad << "XXXX";
    bad.close();
    CHECK_THROWS_AS(read_episode((dir / "bad.dnkt").string()), DatasetError);
}

TEST_CASE("collect_corpus: per-task counts, success, deterministic manifest") {
    const auto d1 = temp_dir("corpus1"), d2 = temp_dir("corpus2");
    auto cfg = tiny_config();
    auto entries = collect_corpus(cfg, d1.string());
    CHECK(entries.size() == 3 * static_cast<size_t>(cfg.demos_per_task));
    for (auto task : sim::kDeskTasks) {
        int n = 0;
        for (const auto& e : entries)
            if (e.task == task) ++n;
        CHECK(n == cfg.demos_per_task);
    }
    auto demos = load_corpus(d1.string());
    CHECK(demos.size() == entries.size());
    for (const auto& demo : demos) {
        auto final_scene = sim::scene_at_frame(demo, demo.frames.size() - 1);
        CHECK(sim::check_success(final_scene, demo.task));
    }

    collect_corpus(cfg, d2.string());
    CHECK(read_text_file((d1 / "manifest.tsv").string()) ==
          read_text_file((d2 / "manifest.tsv").string()));
}

TEST_CASE("metrics: ordered appends, parse-back, tsv shape check") {
    const auto dir = temp_dir("metrics");
    const auto path = (dir / "m.log").string();
    {
        MetricsLog log(path);
        log.log(0, {{"loss", 1.5}});
        log.log(100, {{"loss", 0.75}, {"psnr", 21.0}});
        log.log(100, {{"loss", 0.7}});
        CHECK_THROWS_AS(log.log(50, {{"loss", 0.1}}), MetricsError);
    }
    auto records = read_metrics(path);
    REQUIRE(records.size() == 3);
    CHECK(records[0].values.at("loss") == doctest::Approx(1.5));
    CHECK(records[1].values.at("psnr") == doctest::Approx(21.0));
    CHECK(records[2].step == 100);

    const auto tsv = (dir / "t.tsv").string();
    write_tsv(tsv, {"a", "b"}, {{"1", "2"}, {"3", "4"}});
    CHECK(read_text_file(tsv) == "a\tb\n1\t2\n3\t4\n");
    CHECK_THROWS_AS(write_tsv(tsv, {"a"}, {{"1", "2"}}), MetricsError);
}

TEST_CASE("image io: ppm header and payload, raster round trip") {
    const auto dir = temp_dir("images");
    std::vector<float> rgb(2 * 3 * 3, 0.0f);
    rgb[0] = 1.0f;
    rgb[1] = 0.5f;
    rgb[2] = -0.3f;  // clamped to 0
    const auto ppm = (dir / "img.ppm").string();
    write_ppm(ppm, rgb, 2, 3);
    auto text = read_text_file(ppm);
    CHECK(text.substr(0, 9) == "P6\n3 2\n25");
    CHECK(text.size() == 11 + 2 * 3 * 3);
    CHECK(static_cast<unsigned char>(text[11]) == 255);
    CHECK(static_cast<unsigned char>(text[13]) == 0);
    CHECK_THROWS_AS(write_ppm(ppm, rgb, 4, 4), ImageError);

    std::vector<float> plane = {0.5f, -1.25f, 3.75f, 0.0f, 7.0f, 2.0f};
    const auto raster = (dir / "img.dnr").string();
    write_raster(raster, plane, 2, 3, 1);
    int h = 0, w = 0, c = 0;
    auto back = read_raster(raster, h, w, c);
    CHECK(h == 2);
    CHECK(w == 3);
    CHECK(c == 1);
    CHECK(back == plane);
}

TEST_CASE("norm stats and training examples from a small corpus") {
    auto cfg = tiny_config();
    const auto dir = temp_dir("examples");
    collect_corpus(cfg, dir.string());
    auto corpus = load_corpus(dir.string());
    auto stats = compute_norm_stats(corpus);
    for (int d : {0, 1, 2}) CHECK(stats.hi[static_cast<size_t>(d)] > stats.lo[static_cast<size_t>(d)]);
    CHECK(stats.lo[6] == 0.0f);  // open flag spans both labels in the corpus
    CHECK(stats.hi[6] == 1.0f);

    auto examples = build_examples(cfg, corpus, nullptr, stats);
    CHECK(examples.size() >= 2 * corpus.size());  // at least two keyframes per demo
    const auto ws = sim::default_workspace();
    for (const auto& ex : examples) {
        CHECK(ex.pts.size() == static_cast<size_t>(cfg.m_points));
        CHECK(ex.v_s.size() == static_cast<size_t>(cfg.m_points) * cfg.d_v);
        CHECK(ws.contains(ex.y.trans));
        CHECK(ex.seq.valid[0]);
        for (float v : ex.seq.a) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("run_train: deterministic losses, frozen encoder untouched") {
    auto cfg = tiny_config();
    const auto dir = temp_dir("train");
    collect_corpus(cfg, dir.string());
    auto corpus = load_corpus(dir.string());
    auto stats = compute_norm_stats(corpus);

    auto frozen = make_encoder_bundle(cfg, cfg.seed);
    ParameterSet enc_ps;
    encoder_params(frozen, enc_ps);
    const auto enc_hash_before = param_hash(enc_ps);

    auto examples = build_examples(cfg, corpus, &frozen, stats);

    const auto metrics1 = (dir / "m1.log").string(), metrics2 = (dir / "m2.log").string();
    auto run_once = [&](const std::string& metrics_path) {
        auto bundle = make_policy_bundle(cfg, cfg.seed);
        bundle.stats = stats;
        MetricsLog log(metrics_path);
        return run_train(cfg, examples, bundle, &frozen, &log);
    };
    auto r1 = run_once(metrics1);
    auto r2 = run_once(metrics2);
    CHECK(r1.final_loss == r2.final_loss);
    CHECK(r1.encoder_grad_norm == 0.0f);
    CHECK(param_hash(enc_ps) == enc_hash_before);

    auto m1 = read_metrics(metrics1), m2 = read_metrics(metrics2);
    REQUIRE(m1.size() == m2.size());
    for (size_t i = 0; i < m1.size(); ++i)
        for (const auto& [k, v] : m1[i].values)
            if (k == "loss") CHECK(v == m2[i].values.at(k));
}

TEST_CASE("policy checkpoint: save, reload, identical evaluation") {
    auto cfg = tiny_config();
    const auto dir = temp_dir("policyckpt");
    collect_corpus(cfg, dir.string());
    auto corpus = load_corpus(dir.string());
    auto stats = compute_norm_stats(corpus);
    auto bundle = make_policy_bundle(cfg, cfg.seed);
    bundle.stats = stats;
    auto examples = build_examples(cfg, corpus, nullptr, stats);
    run_train(cfg, examples, bundle, nullptr, nullptr);

    const auto path = (dir / "policy.ckpt").string();
    std::mt19937_64 rng(5);
    save_policy_checkpoint(path, cfg, bundle, rng);
    auto loaded = load_policy_bundle(path, cfg);

    ParameterSet a, b;
    policy_params(bundle, a);
    policy_params(loaded, b);
    CHECK(param_hash(a) == param_hash(b));

    Config lfs_cfg = cfg;
    lfs_cfg.lfs = true;  // no encoder in this test
    auto e1 = evaluate(lfs_cfg, nullptr, bundle, 42);
    auto e2 = evaluate(lfs_cfg, nullptr, loaded, 42);
    REQUIRE(e1.size() == e2.size());
    for (size_t i = 0; i < e1.size(); ++i) CHECK(e1[i].successes == e2[i].successes);

    // config embedded in the checkpoint matches what trained it
    auto embedded = config_from_checkpoint(path);
    CHECK(embedded.hash() == cfg.hash());
    Config other = cfg;
    other.grid = 16;
    CHECK_THROWS_AS(load_policy_bundle(path, other), CheckpointError);
}
