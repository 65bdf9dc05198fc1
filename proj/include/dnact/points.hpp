#pragma once

// Geometric point-feature network (two set-abstraction stages + feature
// propagation) and the fusion stage that combines geometric, semantic,
// proprioceptive, and language features into one global descriptor v_f.

#include <random>

#include "dnact/nn.hpp"
#include "dnact/sim.hpp"

namespace dnact {

constexpr int kPointSamples = 256;  // M
constexpr int kPointFeatDim = 16;   // d_p
constexpr int kFusedDim = 128;

// Input conditioning. Workspace coordinates live in roughly +-0.25 m and the
// frozen volume features have a standard deviation near 5; left as-is the
// semantic channels drown the geometric ones and position regression learns
// slowly. Both constants bring their features to unit-ish scale.
constexpr float kCoordScale = 4.0f;
constexpr float kVolumeFeatScale = 0.2f;

/// Greedy farthest-point sampling; the first index is drawn from rng. When
/// the cloud is smaller than M, samples with replacement.
std::vector<int> farthest_point_indices(const std::vector<sim::Vec3>& pts, int M,
                                        std::mt19937_64& rng);

std::vector<sim::Vec3> sample_points(const sim::Observation& obs, int M, std::mt19937_64& rng);

/// Centroid choice + radius-neighborhood grouping for one set-abstraction
/// stage. Every group contains its own centroid, so none is empty.
struct SaPlan {
    std::vector<int> centroids;            // indices into the input cloud
    std::vector<std::vector<int>> groups;  // member indices per centroid
};

SaPlan build_sa_plan(const std::vector<sim::Vec3>& pts, int n_centroids, float radius,
                     int max_neighbors, std::mt19937_64& rng);

/// Inverse-distance 3-NN interpolation weights for feature propagation.
struct PropPlan {
    std::vector<std::array<int, 3>> nn;
    std::vector<std::array<float, 3>> w;  // rows sum to 1
};

PropPlan build_prop_plan(const std::vector<sim::Vec3>& from, const std::vector<sim::Vec3>& to);

/// All sampling/grouping decisions of encode_points, fixed ahead of the
/// differentiable pass so tests can pin them.
struct PointEncodePlan {
    SaPlan sa1, sa2;
    PropPlan prop1, prop2;
    std::vector<sim::Vec3> centroids1, centroids2;
};

PointEncodePlan plan_point_encode(const std::vector<sim::Vec3>& pts, std::mt19937_64& rng);

float workspace_diagonal();

template <typename T>
struct PointFeatureSetT {
    std::vector<sim::Vec3> positions;  // M
    TensorT<T> features;               // [M, d_p]
};

using PointFeatureSet = PointFeatureSetT<float>;

namespace detail {

/// Expands x[M,C] into stacked group-member rows with relative (and
/// optionally absolute) coordinates appended.
template <typename T>
TensorT<T> group_rows(const TensorT<T>& x, const std::vector<sim::Vec3>& pts,
                      const std::vector<sim::Vec3>& centroids,
                      const std::vector<std::vector<int>>& groups, bool with_abs,
                      std::vector<std::vector<int>>& pooled_groups) {
    std::vector<int> flat;
    pooled_groups.clear();
    pooled_groups.reserve(groups.size());
    for (const auto& g : groups) {
        std::vector<int> rows;
        rows.reserve(g.size());
        for (int m : g) {
            rows.push_back(static_cast<int>(flat.size()));
            flat.push_back(m);
        }
        pooled_groups.push_back(std::move(rows));
    }
    auto feats = gather_rows(x, flat);
    const int extra = with_abs ? 6 : 3;
    auto coords = TensorT<T>::zeros({static_cast<int>(flat.size()), extra});
    int row = 0;
    for (size_t g = 0; g < groups.size(); ++g) {
        const auto& c = centroids[g];
        for (int m : groups[g]) {
            const auto& p = pts[static_cast<size_t>(m)];
            T* out = coords.data() + static_cast<std::int64_t>(row) * extra;
            const T s = static_cast<T>(kCoordScale);
            out[0] = s * static_cast<T>(p.x - c.x);
            out[1] = s * static_cast<T>(p.y - c.y);
            out[2] = s * static_cast<T>(p.z - c.z);
            if (with_abs) {
                out[3] = s * static_cast<T>(c.x);
                out[4] = s * static_cast<T>(c.y);
                out[5] = s * static_cast<T>(c.z);
            }
            ++row;
        }
    }
    return concat<T>({feats, coords}, 1);
}

/// Inverse-distance interpolation of src[G,C] onto the plan's target points.
template <typename T>
TensorT<T> propagate(const TensorT<T>& src, const PropPlan& plan) {
    const int C = src.dim(1);
    const int n = static_cast<int>(plan.nn.size());
    std::vector<TensorT<T>> parts;
    // one gather per neighbor slot keeps the graph small
    for (int j = 0; j < 3; ++j) {
        std::vector<int> rows(static_cast<size_t>(n));
        auto w = TensorT<T>::zeros({n, C});
        for (int i = 0; i < n; ++i) {
            rows[static_cast<size_t>(i)] = plan.nn[static_cast<size_t>(i)][static_cast<size_t>(j)];
            const T wi = static_cast<T>(plan.w[static_cast<size_t>(i)][static_cast<size_t>(j)]);
            for (int c = 0; c < C; ++c) w.data()[static_cast<std::int64_t>(i) * C + c] = wi;
        }
        parts.push_back(mul(gather_rows(src, rows), w));
    }
    return add(parts[0], add(parts[1], parts[2]));
}

}  // namespace detail

/// Two set-abstraction stages with max-pooled groups over relative
/// coordinates, then feature propagation back to every input point.
template <typename T>
struct PointEncoderT {
    MLP<T> sa1, sa2, prop1, prop2;

    PointEncoderT() = default;
    template <typename Rng>
    explicit PointEncoderT(Rng& rng) {
        sa1 = MLP<T>({3 + 3, 32, 64}, rng, Act::relu, Act::relu);
        sa2 = MLP<T>({64 + 3, 64, 64}, rng, Act::relu, Act::relu);
        prop1 = MLP<T>({64 + 64, 64, 64}, rng, Act::relu, Act::relu);
        prop2 = MLP<T>({64 + 3, 32, kPointFeatDim}, rng, Act::relu, Act::none);
    }

    PointFeatureSetT<T> operator()(const std::vector<sim::Vec3>& pts,
                                   const std::vector<sim::Vec3>& colors,
                                   const PointEncodePlan& plan) const {
        const int M = static_cast<int>(pts.size());
        if (M < 16) throw std::invalid_argument("encode_points: need at least 16 points");
        auto rgb = TensorT<T>::zeros({M, 3});
        for (int i = 0; i < M; ++i) {
            rgb.data()[i * 3 + 0] = static_cast<T>(colors[static_cast<size_t>(i)].x);
            rgb.data()[i * 3 + 1] = static_cast<T>(colors[static_cast<size_t>(i)].y);
            rgb.data()[i * 3 + 2] = static_cast<T>(colors[static_cast<size_t>(i)].z);
        }
        std::vector<std::vector<int>> pooled;
        auto rows1 = detail::group_rows(rgb, pts, plan.centroids1, plan.sa1.groups, false, pooled);
        auto f1 = group_max_rows(sa1(rows1), pooled);  // [M/4, 64]

        auto rows2 =
            detail::group_rows(f1, plan.centroids1, plan.centroids2, plan.sa2.groups, false, pooled);
        auto f2 = group_max_rows(sa2(rows2), pooled);  // [M/16, 64]

        auto up1 = prop1(concat<T>({f1, detail::propagate(f2, plan.prop1)}, 1));  // [M/4, 64]
        auto up0 = prop2(concat<T>({rgb, detail::propagate(up1, plan.prop2)}, 1));  // [M, d_p]
        return {pts, up0};
    }

    PointFeatureSetT<T> operator()(const std::vector<sim::Vec3>& pts,
                                   const std::vector<sim::Vec3>& colors,
                                   std::mt19937_64& rng) const {
        return (*this)(pts, colors, plan_point_encode(pts, rng));
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        sa1.collect(ps, prefix + ".sa1");
        sa2.collect(ps, prefix + ".sa2");
        prop1.collect(ps, prefix + ".prop1");
        prop2.collect(ps, prefix + ".prop2");
    }
};

using PointEncoder = PointEncoderT<float>;

/// Fuses semantic (v_s), geometric (v_p), proprioceptive, and language
/// features into v_f through projection, per-point attachment, and two
/// pooling set-abstraction blocks.
template <typename T>
struct FusionT {
    int d_v = 16;
    LinearLayer<T> proprio_proj, lang_proj;
    MLP<T> block1, block2, head;

    FusionT() = default;
    template <typename Rng>
    FusionT(int volume_feat, Rng& rng) : d_v(volume_feat) {
        proprio_proj = LinearLayer<T>(4, 8, rng);
        lang_proj = LinearLayer<T>(sim::kLangDim, 16, rng);
        const int per_point = d_v + kPointFeatDim + 8 + 16;
        block1 = MLP<T>({per_point + 6, 64, 64}, rng, Act::relu, Act::relu);
        block2 = MLP<T>({128 + 3, 128, 128}, rng, Act::relu, Act::relu);
        head = MLP<T>({256, 128, kFusedDim}, rng, Act::relu, Act::none);
    }

    /// v_s: [M, d_v] semantic features from the frozen volume; v_p from the
    /// point encoder. Returns v_f as [1, 128].
    TensorT<T> operator()(const PointFeatureSetT<T>& v_p, const TensorT<T>& v_s,
                          const std::array<float, 4>& proprio,
                          const std::array<float, sim::kLangDim>& lang,
                          std::mt19937_64& rng) const {
        const int M = static_cast<int>(v_p.positions.size());
        if (v_s.dim(0) != M || v_s.dim(1) != d_v)
            throw std::invalid_argument("fuse: v_s shape mismatch");
        if (v_p.features.dim(0) != M || v_p.features.dim(1) != kPointFeatDim)
            throw std::invalid_argument("fuse: v_p shape mismatch");

        std::vector<T> pdata(proprio.begin(), proprio.end());
        std::vector<T> ldata(lang.begin(), lang.end());
        auto p8 = proprio_proj(TensorT<T>::from_data({1, 4}, std::move(pdata)));
        auto l16 = lang_proj(TensorT<T>::from_data({1, sim::kLangDim}, std::move(ldata)));
        std::vector<int> all_zero(static_cast<size_t>(M), 0);
        auto attached = concat<T>({scale(v_s, static_cast<T>(kVolumeFeatScale)), v_p.features,
                                   gather_rows(p8, all_zero), gather_rows(l16, all_zero)},
                                  1);

        auto plan = build_sa_plan(v_p.positions, 32, 0.5f * workspace_diagonal(), 32, rng);
        std::vector<sim::Vec3> cpos(plan.centroids.size());
        for (size_t i = 0; i < cpos.size(); ++i)
            cpos[i] = v_p.positions[static_cast<size_t>(plan.centroids[i])];
        std::vector<std::vector<int>> pooled;
        auto rows1 =
            detail::group_rows(attached, v_p.positions, cpos, plan.groups, true, pooled);
        auto h1 = block1(rows1);
        auto g1 = concat<T>({group_max_rows(h1, pooled), group_mean_rows(h1, pooled)}, 1);

        auto abs2 = TensorT<T>::zeros({static_cast<int>(cpos.size()), 3});
        for (size_t i = 0; i < cpos.size(); ++i) {
            const T s = static_cast<T>(kCoordScale);
            abs2.data()[static_cast<std::int64_t>(i) * 3 + 0] = s * static_cast<T>(cpos[i].x);
            abs2.data()[static_cast<std::int64_t>(i) * 3 + 1] = s * static_cast<T>(cpos[i].y);
            abs2.data()[static_cast<std::int64_t>(i) * 3 + 2] = s * static_cast<T>(cpos[i].z);
        }
        auto h2 = block2(concat<T>({g1, abs2}, 1));
        std::vector<std::vector<int>> whole(1);
        for (int i = 0; i < static_cast<int>(cpos.size()); ++i) whole[0].push_back(i);
        auto global = concat<T>({group_max_rows(h2, whole), group_mean_rows(h2, whole)}, 1);
        return head(global);  // [1, 128]
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        proprio_proj.collect(ps, prefix + ".proprio");
        lang_proj.collect(ps, prefix + ".lang");
        block1.collect(ps, prefix + ".block1");
        block2.collect(ps, prefix + ".block2");
        head.collect(ps, prefix + ".head");
    }
};

using Fusion = FusionT<float>;

}  // namespace dnact
