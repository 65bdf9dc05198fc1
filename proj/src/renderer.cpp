#include "dnact/renderer.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace dnact {

PretrainScene make_pretrain_scene(const sim::Scene& scene) {
    sim::GripperState gripper;  // parked at its home pose
    auto obs = sim::make_observation(scene, gripper, sim::training_cameras());
    PretrainScene out;
    out.points = std::move(obs.points);
    out.colors = std::move(obs.colors);
    out.views = std::move(obs.views);
    return out;
}

std::vector<RaySample> sample_ray_batch(const PretrainScene& scene, const sim::Aabb& workspace,
                                        int b, std::mt19937_64& rng) {
    if (scene.views.empty()) throw std::invalid_argument("sample_ray_batch: scene has no views");
    std::vector<RaySample> batch;
    batch.reserve(static_cast<size_t>(b));
    std::uniform_int_distribution<size_t> pick_view(0, scene.views.size() - 1);
    int attempts = 0;
    const int max_attempts = 1000 * b;
    while (static_cast<int>(batch.size()) < b) {
        if (++attempts > max_attempts)
            throw std::runtime_error("sample_ray_batch: no rays intersect the workspace");
        const auto& view = scene.views[pick_view(rng)];
        const int H = view.camera.height, W = view.camera.width;
        std::uniform_int_distribution<int> pick_i(0, H - 1), pick_j(0, W - 1);
        const int i = pick_i(rng), j = pick_j(rng);
        sim::Vec3 o, d;
        sim::pixel_ray(view.camera, static_cast<float>(i), static_cast<float>(j), o, d);
        auto span = ray_aabb_span(workspace, o, d);
        if (!span) continue;
        RaySample s;
        s.ray = {o, d, span->first, span->second};
        const size_t px = static_cast<size_t>(i * W + j);
        for (int c = 0; c < 3; ++c) s.rgb[static_cast<size_t>(c)] = view.rgb[px * 3 + static_cast<size_t>(c)];
        for (int c = 0; c < sim::kFeatureDim; ++c)
            s.feat[static_cast<size_t>(c)] = view.feat[px * sim::kFeatureDim + static_cast<size_t>(c)];
        batch.push_back(s);
    }
    return batch;
}

std::vector<float> pretrain(const std::vector<PretrainScene>& corpus, VoxelEncoder<float>& encoder,
                            FieldHeads& heads, const VoxelConfig& cfg,
                            const PretrainConfig& pcfg) {
    if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
    ParameterSet params;
    encoder.collect(params, "encoder");
    heads.collect(params, "heads");

    std::vector<Tensor> grids;
    grids.reserve(corpus.size());
    for (const auto& s : corpus) grids.push_back(voxelize<float>(s.points, s.colors, cfg));

    std::mt19937_64 rng(pcfg.seed);
    std::uniform_int_distribution<size_t> pick_scene(0, corpus.size() - 1);
    std::vector<float> losses;
    losses.reserve(static_cast<size_t>(pcfg.steps));
    for (int step = 0; step < pcfg.steps; ++step) {
        const size_t s = pick_scene(rng);
        auto volume = encoder(grids[s]);
        auto batch = sample_ray_batch(corpus[s], cfg.workspace, pcfg.ray_batch, rng);
        auto loss = recon_loss(batch, volume, heads, cfg, pcfg.lambda_feat, pcfg.n_samples,
                               true, rng);
        const float value = loss.data()[0];
        if (!std::isfinite(value))
            throw TrainingDiverged(step, "pretrain: non-finite loss at step " +
                                             std::to_string(step));
        loss.backward();
        params.adam_step(pcfg.lr, pcfg.weight_decay);
        losses.push_back(value);
    }
    return losses;
}

void render_image(const Tensor& volume, const FieldHeads& heads, const VoxelConfig& cfg,
                  const sim::Camera& cam, int n_samples, std::vector<float>& rgb_out,
                  std::vector<float>& feat_out, std::vector<float>* depth_out) {
    const int H = cam.height, W = cam.width;
    rgb_out.assign(static_cast<size_t>(H * W * 3), 0.0f);
    feat_out.assign(static_cast<size_t>(H * W) * static_cast<size_t>(heads.d_f), 0.0f);
    if (depth_out) depth_out->assign(static_cast<size_t>(H * W), 0.0f);
    std::mt19937_64 rng(0);
    const int chunk = 128;
    std::vector<Ray> rays;
    std::vector<size_t> pixels;
    auto flush = [&] {
        if (rays.empty()) return;
        auto out = render_rays(rays, volume, heads, cfg, n_samples, false, rng);
        for (size_t r = 0; r < rays.size(); ++r) {
            const size_t px = pixels[r];
            for (int c = 0; c < 3; ++c)
                rgb_out[px * 3 + static_cast<size_t>(c)] = out.rgb[r].data()[c];
            for (int c = 0; c < heads.d_f; ++c)
                feat_out[px * static_cast<size_t>(heads.d_f) + static_cast<size_t>(c)] =
                    out.feat[r].data()[c];
            if (depth_out) (*depth_out)[px] = out.depth[r];
        }
        rays.clear();
        pixels.clear();
    };
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            sim::Vec3 o, d;
            sim::pixel_ray(cam, static_cast<float>(i), static_cast<float>(j), o, d);
            auto span = ray_aabb_span(cfg.workspace, o, d);
            if (!span) continue;  // pixel stays background
            rays.push_back({o, d, span->first, span->second});
            pixels.push_back(static_cast<size_t>(i * W + j));
            if (static_cast<int>(rays.size()) >= chunk) flush();
        }
    flush();
}

float psnr_rgb(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("psnr_rgb: size mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    mse = std::max(mse, 1e-10);
    return static_cast<float>(10.0 * std::log10(1.0 / mse));
}

std::vector<float> feature_pca_image(const std::vector<float>& feat, int height, int width,
                                     int d) {
    const int n = height * width;
    if (n < 3 || static_cast<int>(feat.size()) != n * d)
        throw std::invalid_argument("feature_pca_image: bad raster shape");
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        feat.data(), n, d);
    Eigen::RowVectorXf mean = X.colwise().mean();
    Eigen::MatrixXf centered = X.rowwise() - mean;
    Eigen::MatrixXf cov = centered.transpose() * centered / static_cast<float>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXf> solver(cov);
    // eigenvalues ascend; take the top 3 components
    Eigen::MatrixXf basis = solver.eigenvectors().rightCols(std::min(3, d));
    Eigen::MatrixXf proj = centered * basis;

    std::vector<float> out(static_cast<size_t>(n) * 3, 0.5f);
    for (int c = 0; c < proj.cols(); ++c) {
        const float lo = proj.col(c).minCoeff(), hi = proj.col(c).maxCoeff();
        if (hi - lo < 1e-12f) continue;  // degenerate channel stays mid-gray
        for (int i = 0; i < n; ++i)
            out[static_cast<size_t>(i) * 3 + static_cast<size_t>(c)] =
                (proj(i, c) - lo) / (hi - lo);
    }
    return out;
}

}  // namespace dnact
