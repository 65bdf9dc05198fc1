#pragma once

// Neural feature field over the volume grid: density / color / semantic-feature
// heads, differentiable ray quadrature, reconstruction loss, and the
// pre-training loop that optimizes the 3D encoder from multi-view images.

#include <random>

#include "dnact/nn.hpp"
#include "dnact/voxel.hpp"

namespace dnact {

struct Ray {
    sim::Vec3 origin;
    sim::Vec3 dir;  // unit norm
    float t_near = 0.01f;
    float t_far = 2.0f;
};

inline void validate(const Ray& r) {
    if (std::abs(r.dir.norm() - 1.0f) > 1e-6f)
        throw std::invalid_argument("Ray: direction must be unit norm");
    if (!(0.0f < r.t_near && r.t_near < r.t_far))
        throw std::invalid_argument("Ray: need 0 < t_near < t_far");
}

/// Entry/exit distances of a ray through an AABB, or nullopt when it misses
/// or the box lies entirely behind the origin.
inline std::optional<std::pair<float, float>> ray_aabb_span(const sim::Aabb& box,
                                                            const sim::Vec3& o,
                                                            const sim::Vec3& d) {
    float t0 = 0.0f, t1 = std::numeric_limits<float>::infinity();
    const float ov[3] = {o.x, o.y, o.z}, dv[3] = {d.x, d.y, d.z};
    const float lo[3] = {box.lo.x, box.lo.y, box.lo.z}, hi[3] = {box.hi.x, box.hi.y, box.hi.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dv[a]) < 1e-9f) {
            if (ov[a] < lo[a] || ov[a] > hi[a]) return std::nullopt;
            continue;
        }
        float ta = (lo[a] - ov[a]) / dv[a], tb = (hi[a] - ov[a]) / dv[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t1 <= t0 || t1 <= 0.0f) return std::nullopt;
    return std::make_pair(std::max(t0, 1e-4f), t1);
}

/// Sample depths along a ray: deterministic bin midpoints, or one uniform
/// draw per equal-width bin when stratified.
inline std::vector<float> sample_ray(const Ray& ray, int n_samples, bool stratified,
                                     std::mt19937_64& rng) {
    validate(ray);
    if (n_samples < 2) throw std::invalid_argument("sample_ray: n_samples must be >= 2");
    std::vector<float> ts(static_cast<size_t>(n_samples));
    const float span = (ray.t_far - ray.t_near) / static_cast<float>(n_samples);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int i = 0; i < n_samples; ++i) {
        const float jitter = stratified ? u(rng) : 0.5f;
        ts[static_cast<size_t>(i)] = ray.t_near + (static_cast<float>(i) + jitter) * span;
    }
    return ts;
}

/// Quadrature weights w_i = T_i (1 - exp(-sigma_i delta_i)) with
/// T_i = exp(-sum_{j<i} sigma_j delta_j), emitted as a [1, n] row so a matmul
/// against per-sample values integrates the ray. Residual transmittance
/// T_final = 1 - sum(w) is written to *t_final (not differentiated; the
/// background contributes nothing to the loss).
template <typename T>
TensorT<T> render_weights(const TensorT<T>& sigma, const std::vector<T>& deltas,
                          T* t_final = nullptr) {
    const std::int64_t n = sigma.numel();
    if (static_cast<std::int64_t>(deltas.size()) != n)
        throw std::invalid_argument("render_weights: sigma/delta length mismatch");
    std::vector<T> trans(static_cast<size_t>(n) + 1);  // trans[i] = exp(-S_i)
    trans[0] = T(1);
    T s = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        s += sigma.data()[i] * deltas[static_cast<size_t>(i)];
        trans[static_cast<size_t>(i) + 1] = std::exp(-s);
    }
    auto out = make_op<T>({1, static_cast<int>(n)}, {sigma},
                          [sn = sigma.node(), deltas, trans](TensorNode<T>& o) {
                              if (!sn->requires_grad) return;
                              const std::int64_t n = static_cast<std::int64_t>(deltas.size());
                              // dL/dsigma_j = g_j d_j exp(-S_{j+1}) - d_j sum_{i>j} g_i w_i
                              T suffix = 0;
                              for (std::int64_t j = n - 1; j >= 0; --j) {
                                  const size_t ju = static_cast<size_t>(j);
                                  sn->grad[ju] += deltas[ju] * (o.grad[ju] * trans[ju + 1] - suffix);
                                  suffix += o.grad[ju] * (trans[ju] - trans[ju + 1]);
                              }
                          });
    T wsum = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const size_t iu = static_cast<size_t>(i);
        out.data()[i] = trans[iu] - trans[iu + 1];
        wsum += out.data()[i];
    }
    if (t_final) *t_final = trans[static_cast<size_t>(n)];
    return out;
}

constexpr int kPosOctaves = 4;  // octaves for sample positions
constexpr int kDirOctaves = 2;  // octaves for view directions

/// Density, color, and semantic-feature MLP heads conditioned on the
/// positional-encoded sample point, view direction, and queried volume
/// feature. Discarded after pre-training.
template <typename T>
struct FieldHeadsT {
    int d_v = 16, d_f = sim::kFeatureDim;
    MLP<T> sigma_mlp, color_mlp, feat_mlp;

    FieldHeadsT() = default;
    template <typename Rng>
    FieldHeadsT(int volume_feat, int feat_dim, Rng& rng) : d_v(volume_feat), d_f(feat_dim) {
        const int px = positional_encode_dim(3, kPosOctaves);
        const int pd = positional_encode_dim(3, kDirOctaves);
        sigma_mlp = MLP<T>({px + d_v, 64, 64, 1}, rng, Act::relu, Act::none);
        color_mlp = MLP<T>({px + pd + d_v, 64, 64, 3}, rng, Act::relu, Act::sigmoid);
        feat_mlp = MLP<T>({px + pd + d_v, 64, 64, d_f}, rng, Act::relu, Act::none);
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        sigma_mlp.collect(ps, prefix + ".sigma");
        color_mlp.collect(ps, prefix + ".color");
        feat_mlp.collect(ps, prefix + ".feat");
    }
};

using FieldHeads = FieldHeadsT<float>;

namespace detail {

/// Positional encodings for a batch of sample points and their ray
/// directions; positions are normalized to [-1, 1] over the workspace.
template <typename T>
void field_inputs(const std::vector<sim::Vec3>& pts, const std::vector<sim::Vec3>& dirs,
                  const VoxelConfig& cfg, TensorT<T>& px, TensorT<T>& pd) {
    const int npx = positional_encode_dim(3, kPosOctaves);
    const int npd = positional_encode_dim(3, kDirOctaves);
    const std::int64_t n = static_cast<std::int64_t>(pts.size());
    px = TensorT<T>::zeros({static_cast<int>(n), npx});
    pd = TensorT<T>::zeros({static_cast<int>(n), npd});
    const sim::Vec3 lo = cfg.workspace.lo, hi = cfg.workspace.hi;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& p = pts[static_cast<size_t>(i)];
        const T xn[3] = {static_cast<T>(2 * (p.x - lo.x) / (hi.x - lo.x) - 1),
                         static_cast<T>(2 * (p.y - lo.y) / (hi.y - lo.y) - 1),
                         static_cast<T>(2 * (p.z - lo.z) / (hi.z - lo.z) - 1)};
        positional_encode(xn, 3, kPosOctaves, px.data() + i * npx);
        const auto& d = dirs[static_cast<size_t>(i)];
        const T dn[3] = {static_cast<T>(d.x), static_cast<T>(d.y), static_cast<T>(d.z)};
        positional_encode(dn, 3, kDirOctaves, pd.data() + i * npd);
    }
}

}  // namespace detail

struct RaySample {
    Ray ray;
    std::array<float, 3> rgb{};
    std::array<float, sim::kFeatureDim> feat{};
};

struct RenderResult {
    std::array<float, 3> rgb{};
    std::vector<float> feat;
    float t_final = 1.0f;
    float depth = 0.0f;
};

/// Differentiable per-ray outputs for a batch of rays sharing one volume.
template <typename T>
struct RayBatchOutput {
    std::vector<TensorT<T>> rgb;   // each [1, 3]
    std::vector<TensorT<T>> feat;  // each [1, d_f]
    std::vector<T> t_final;
    std::vector<T> depth;
};

/// Evaluates the field at every sample of every ray in one batched pass and
/// integrates each ray with Eq.-1 quadrature.
template <typename T>
RayBatchOutput<T> render_rays(const std::vector<Ray>& rays, const TensorT<T>& volume,
                              const FieldHeadsT<T>& heads, const VoxelConfig& cfg, int n_samples,
                              bool stratified, std::mt19937_64& rng) {
    if (rays.empty()) throw std::invalid_argument("render_rays: empty batch");
    const size_t R = rays.size(), n = static_cast<size_t>(n_samples);
    std::vector<float> all_ts(R * n);
    std::vector<sim::Vec3> pts(R * n), dirs(R * n);
    for (size_t r = 0; r < R; ++r) {
        auto ts = sample_ray(rays[r], n_samples, stratified, rng);
        for (size_t i = 0; i < n; ++i) {
            all_ts[r * n + i] = ts[i];
            pts[r * n + i] = rays[r].origin + rays[r].dir * ts[i];
            dirs[r * n + i] = rays[r].dir;
        }
    }
    TensorT<T> px, pd;
    detail::field_inputs(pts, dirs, cfg, px, pd);
    auto vx = query_points(volume, pts, cfg);
    auto sigma = softplus(heads.sigma_mlp(concat<T>({px, vx}, 1)));
    auto cf_in = concat<T>({px, pd, vx}, 1);
    auto color = heads.color_mlp(cf_in);
    auto feat = heads.feat_mlp(cf_in);

    RayBatchOutput<T> out;
    out.rgb.reserve(R);
    out.feat.reserve(R);
    out.t_final.resize(R);
    out.depth.resize(R);
    std::vector<int> idx(n);
    for (size_t r = 0; r < R; ++r) {
        for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(r * n + i);
        std::vector<T> deltas(n);
        for (size_t i = 0; i + 1 < n; ++i)
            deltas[i] = static_cast<T>(all_ts[r * n + i + 1] - all_ts[r * n + i]);
        deltas[n - 1] = static_cast<T>(rays[r].t_far - all_ts[r * n + n - 1]);
        auto sg = reshape(gather_rows(sigma, idx), {static_cast<int>(n)});
        auto w = render_weights(sg, deltas, &out.t_final[r]);
        out.rgb.push_back(matmul(w, gather_rows(color, idx)));
        out.feat.push_back(matmul(w, gather_rows(feat, idx)));
        T d = 0;
        for (size_t i = 0; i < n; ++i) d += w.data()[i] * static_cast<T>(all_ts[r * n + i]);
        out.depth[r] = d;
    }
    return out;
}

/// Single-ray evaluation with deterministic midpoint sampling.
template <typename T>
RenderResult render(const Ray& ray, const TensorT<T>& volume, const FieldHeadsT<T>& heads,
                    const VoxelConfig& cfg, int n_samples) {
    std::mt19937_64 rng(0);
    auto batch = render_rays<T>({ray}, volume, heads, cfg, n_samples, false, rng);
    RenderResult res;
    for (int c = 0; c < 3; ++c) res.rgb[static_cast<size_t>(c)] = static_cast<float>(batch.rgb[0].data()[c]);
    res.feat.resize(static_cast<size_t>(heads.d_f));
    for (int c = 0; c < heads.d_f; ++c) res.feat[static_cast<size_t>(c)] = static_cast<float>(batch.feat[0].data()[c]);
    res.t_final = static_cast<float>(batch.t_final[0]);
    res.depth = static_cast<float>(batch.depth[0]);
    return res;
}

/// Mean over rays of |C - C_hat|^2 + lambda_feat |F - F_hat|^2 (Eq. 2).
template <typename T>
TensorT<T> recon_loss(const std::vector<RaySample>& batch, const TensorT<T>& volume,
                      const FieldHeadsT<T>& heads, const VoxelConfig& cfg, T lambda_feat,
                      int n_samples, bool stratified, std::mt19937_64& rng) {
    if (batch.empty()) throw std::invalid_argument("recon_loss: empty batch");
    std::vector<Ray> rays(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) rays[i] = batch[i].ray;
    auto rendered = render_rays(rays, volume, heads, cfg, n_samples, stratified, rng);
    std::vector<TensorT<T>> per_ray;
    per_ray.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        std::vector<T> cgt(batch[i].rgb.begin(), batch[i].rgb.end());
        std::vector<T> fgt(batch[i].feat.begin(), batch[i].feat.end());
        auto dc = sub(rendered.rgb[i], TensorT<T>::from_data({1, 3}, std::move(cgt)));
        auto df = sub(rendered.feat[i],
                      TensorT<T>::from_data({1, heads.d_f}, std::move(fgt)));
        per_ray.push_back(add(sum(mul(dc, dc)), scale(sum(mul(df, df)), lambda_feat)));
    }
    return mean(concat(per_ray, 0));
}

// pre-training ---------------------------------------------------------------

/// Multi-view data for one scene: the fused point cloud that feeds the voxel
/// grid plus ground-truth images per camera. No actions involved.
struct PretrainScene {
    std::vector<sim::Vec3> points, colors;
    std::vector<sim::CameraView> views;
};

PretrainScene make_pretrain_scene(const sim::Scene& scene);

struct PretrainConfig {
    int steps = 2000;
    int ray_batch = 512;
    int n_samples = 32;
    float lr = 5e-4f;
    float weight_decay = 1e-6f;
    float lambda_feat = 0.01f;
    std::uint64_t seed = 1;
};

struct TrainingDiverged : std::runtime_error {
    int step;
    explicit TrainingDiverged(int step_, const std::string& what)
        : std::runtime_error(what), step(step_) {}
};

/// Optimizes encoder + heads on recon_loss over the scene corpus; returns the
/// per-step loss curve. Throws TrainingDiverged on a non-finite loss.
std::vector<float> pretrain(const std::vector<PretrainScene>& corpus, VoxelEncoder<float>& encoder,
                            FieldHeads& heads, const VoxelConfig& cfg, const PretrainConfig& pcfg);

/// Draws b valid ray samples (rays that cross the workspace) uniformly over
/// the scene's views and pixels.
std::vector<RaySample> sample_ray_batch(const PretrainScene& scene, const sim::Aabb& workspace,
                                        int b, std::mt19937_64& rng);

/// Renders a full camera view from the volume (midpoint sampling, chunked).
void render_image(const Tensor& volume, const FieldHeads& heads, const VoxelConfig& cfg,
                  const sim::Camera& cam, int n_samples, std::vector<float>& rgb_out,
                  std::vector<float>& feat_out, std::vector<float>* depth_out = nullptr);

/// PSNR in dB between two [0,1] RGB rasters of equal size.
float psnr_rgb(const std::vector<float>& a, const std::vector<float>& b);

/// Projects a H*W*d feature raster to RGB via 3-component pixel PCA, each
/// channel min-max normalized; zero-variance input maps to mid-gray.
std::vector<float> feature_pca_image(const std::vector<float>& feat, int height, int width, int d);

}  // namespace dnact
