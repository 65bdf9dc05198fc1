#pragma once

// Point-cloud voxelization and the scaled-down 3D U-Net producing the volume
// feature grid, plus trilinear feature queries in world coordinates.

#include "dnact/nn.hpp"
#include "dnact/ops.hpp"
#include "dnact/sim.hpp"

namespace dnact {

struct VoxelConfig {
    int grid = 32;    // G
    int feat = 16;    // d_v
    sim::Aabb workspace = sim::default_workspace();
};

constexpr int kVoxelChannels = 10;  // occupancy, rgb, mean offset, count, 2 reserved

/// Lattice coordinate of a world point: cell-center lattice spans
/// [0, G-1] across the workspace.
inline std::array<float, 3> world_to_lattice(const VoxelConfig& cfg, const sim::Vec3& p) {
    const sim::Vec3 lo = cfg.workspace.lo, hi = cfg.workspace.hi;
    const float g = static_cast<float>(cfg.grid);
    return {(p.x - lo.x) / (hi.x - lo.x) * g - 0.5f, (p.y - lo.y) / (hi.y - lo.y) * g - 0.5f,
            (p.z - lo.z) / (hi.z - lo.z) * g - 0.5f};
}

/// Bins points into a [10, G, G, G] channel-first grid: occupancy flag, mean
/// color, mean fractional offset within the cell, normalized point count, and
/// two zero-filled reserved channels.
template <typename T>
TensorT<T> voxelize(const std::vector<sim::Vec3>& points, const std::vector<sim::Vec3>& colors,
                    const VoxelConfig& cfg) {
    if (points.empty()) throw std::invalid_argument("voxelize: empty point cloud");
    const int G = cfg.grid;
    auto grid = TensorT<T>::zeros({kVoxelChannels, G, G, G});
    std::vector<int> counts(static_cast<size_t>(G) * G * G, 0);
    const sim::Vec3 lo = cfg.workspace.lo, hi = cfg.workspace.hi;
    const float sx = static_cast<float>(G) / (hi.x - lo.x);
    const float sy = static_cast<float>(G) / (hi.y - lo.y);
    const float sz = static_cast<float>(G) / (hi.z - lo.z);
    auto clampi = [G](int v) { return std::min(std::max(v, 0), G - 1); };
    const std::int64_t cell_stride = static_cast<std::int64_t>(G) * G * G;
    T* d = grid.data();
    for (size_t i = 0; i < points.size(); ++i) {
        const float fx = (points[i].x - lo.x) * sx;
        const float fy = (points[i].y - lo.y) * sy;
        const float fz = (points[i].z - lo.z) * sz;
        const int ix = clampi(static_cast<int>(fx));
        const int iy = clampi(static_cast<int>(fy));
        const int iz = clampi(static_cast<int>(fz));
        const std::int64_t c = (static_cast<std::int64_t>(ix) * G + iy) * G + iz;
        ++counts[static_cast<size_t>(c)];
        d[0 * cell_stride + c] = T(1);
        d[1 * cell_stride + c] += static_cast<T>(colors[i].x);
        d[2 * cell_stride + c] += static_cast<T>(colors[i].y);
        d[3 * cell_stride + c] += static_cast<T>(colors[i].z);
        d[4 * cell_stride + c] += static_cast<T>(fx - ix);
        d[5 * cell_stride + c] += static_cast<T>(fy - iy);
        d[6 * cell_stride + c] += static_cast<T>(fz - iz);
    }
    for (std::int64_t c = 0; c < cell_stride; ++c) {
        const int n = counts[static_cast<size_t>(c)];
        if (n == 0) continue;
        const T inv = T(1) / static_cast<T>(n);
        for (int ch = 1; ch <= 6; ++ch) d[ch * cell_stride + c] *= inv;
        d[7 * cell_stride + c] = std::min(T(n) / T(16), T(1));
    }
    return grid;
}

/// Channel-first [C,D,H,W] -> channel-last [D,H,W,C] (differentiable copy).
template <typename T>
TensorT<T> to_channel_last3d(const TensorT<T>& x) {
    const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t spatial = static_cast<std::int64_t>(D) * H * W;
    auto out = make_op<T>({D, H, W, C}, {x}, [xn = x.node(), C, spatial](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        for (std::int64_t s = 0; s < spatial; ++s)
            for (int c = 0; c < C; ++c)
                xn->grad[static_cast<size_t>(c * spatial + s)] +=
                    o.grad[static_cast<size_t>(s * C + c)];
    });
    for (std::int64_t s = 0; s < spatial; ++s)
        for (int c = 0; c < C; ++c) out.data()[s * C + c] = x.data()[c * spatial + s];
    return out;
}

/// 3D U-Net: encoder halves the resolution four times, decoder restores it
/// with additive skips, final conv maps to the volume feature width.
template <typename T>
struct VoxelEncoder {
    VoxelConfig cfg;
    ConvBlock3d<T> c0, c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c13, c15, c17, c19;
    TensorT<T> out_w, out_b;

    VoxelEncoder() = default;
    template <typename Rng>
    VoxelEncoder(const VoxelConfig& config, Rng& rng) : cfg(config) {
        if (cfg.grid % 16 != 0)
            throw std::invalid_argument("VoxelEncoder: grid must be divisible by 16");
        const int w = 2;  // base width
        c0 = ConvBlock3d<T>(kVoxelChannels, w, 3, 1, rng);
        c1 = ConvBlock3d<T>(w, 2 * w, 3, 2, rng);
        c2 = ConvBlock3d<T>(2 * w, 2 * w, 3, 1, rng);
        c3 = ConvBlock3d<T>(2 * w, 4 * w, 3, 2, rng);
        c4 = ConvBlock3d<T>(4 * w, 4 * w, 3, 1, rng);
        c5 = ConvBlock3d<T>(4 * w, 8 * w, 3, 2, rng);
        c6 = ConvBlock3d<T>(8 * w, 8 * w, 3, 1, rng);
        c7 = ConvBlock3d<T>(8 * w, 16 * w, 3, 2, rng);
        c8 = ConvBlock3d<T>(16 * w, 16 * w, 3, 1, rng);
        c9 = ConvBlock3d<T>(16 * w, 32 * w, 3, 1, rng);
        c10 = ConvBlock3d<T>(32 * w, 32 * w, 3, 1, rng);
        c11 = ConvBlock3d<T>(32 * w, 16 * w, 1, 1, rng);
        c13 = ConvBlock3d<T>(16 * w, 8 * w, 3, 1, rng);
        c15 = ConvBlock3d<T>(8 * w, 4 * w, 3, 1, rng);
        c17 = ConvBlock3d<T>(4 * w, 2 * w, 3, 1, rng);
        c19 = ConvBlock3d<T>(2 * w, w, 3, 1, rng);
        const T bound = std::sqrt(T(6) / static_cast<T>(w * 27));
        out_w = TensorT<T>::uniform({cfg.feat, w, 3, 3, 3}, rng, -bound, bound);
        out_b = TensorT<T>::zeros({cfg.feat});
    }

    /// grid[10,G,G,G] -> channel-last volume feature [G,G,G,d_v].
    TensorT<T> operator()(const TensorT<T>& grid) const {
        auto e0 = c0(grid);
        auto e2 = c2(c1(e0));
        auto e4 = c4(c3(e2));
        auto e6 = c6(c5(e4));
        auto e8 = c8(c7(e6));
        auto x = c10(c9(e8));
        x = add(e8, c11(x));
        x = add(e6, c13(upsample_nearest3d(x, 2)));
        x = add(e4, c15(upsample_nearest3d(x, 2)));
        x = add(e2, c17(upsample_nearest3d(x, 2)));
        x = add(e0, c19(upsample_nearest3d(x, 2)));
        return to_channel_last3d(conv3d(x, out_w, out_b, 1, 1));
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        const ConvBlock3d<T>* blocks[] = {&c0, &c1, &c2,  &c3,  &c4,  &c5,  &c6,  &c7,
                                          &c8, &c9, &c10, &c11, &c13, &c15, &c17, &c19};
        const char* names[] = {"c0", "c1", "c2",  "c3",  "c4",  "c5",  "c6",  "c7",
                               "c8", "c9", "c10", "c11", "c13", "c15", "c17", "c19"};
        for (int i = 0; i < 16; ++i) blocks[i]->collect(ps, prefix + "." + names[i]);
        ps.add(prefix + ".out.w", out_w);
        ps.add(prefix + ".out.b", out_b);
    }
};

/// Trilinear feature lookup at world points: differentiable w.r.t. the grid
/// values only; out-of-bounds points clamp to the boundary lattice.
template <typename T>
TensorT<T> query_points(const TensorT<T>& volume, const std::vector<sim::Vec3>& pts,
                        const VoxelConfig& cfg) {
    if (pts.empty()) throw std::invalid_argument("query_points: need at least one point");
    std::vector<std::array<T, 3>> lat(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        auto l = world_to_lattice(cfg, pts[i]);
        lat[i] = {static_cast<T>(l[0]), static_cast<T>(l[1]), static_cast<T>(l[2])};
    }
    return trilinear_gather(volume, lat);
}

template <typename T>
TensorT<T> query_trilinear(const TensorT<T>& volume, const sim::Vec3& p, const VoxelConfig& cfg) {
    return query_points(volume, std::vector<sim::Vec3>{p}, cfg);
}

}  // namespace dnact
