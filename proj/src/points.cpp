#include "dnact/points.hpp"

#include <algorithm>
#include <numeric>

namespace dnact {

float workspace_diagonal() {
    const auto ws = sim::default_workspace();
    return (ws.hi - ws.lo).norm();
}

std::vector<int> farthest_point_indices(const std::vector<sim::Vec3>& pts, int M,
                                        std::mt19937_64& rng) {
    if (pts.empty()) throw sim::DegenerateObservation("farthest_point_indices: empty cloud");
    if (M <= 0) throw std::invalid_argument("farthest_point_indices: M must be positive");
    const int n = static_cast<int>(pts.size());
    if (n < M) {
        std::uniform_int_distribution<int> pick(0, n - 1);
        std::vector<int> idx(static_cast<size_t>(M));
        for (auto& i : idx) i = pick(rng);
        return idx;
    }
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(M));
    std::uniform_int_distribution<int> pick(0, n - 1);
    idx.push_back(pick(rng));
    std::vector<float> dist(static_cast<size_t>(n), std::numeric_limits<float>::infinity());
    for (int step = 1; step < M; ++step) {
        const auto& last = pts[static_cast<size_t>(idx.back())];
        int best = 0;
        float best_d = -1;
        for (int i = 0; i < n; ++i) {
            const float d = (pts[static_cast<size_t>(i)] - last).dot(pts[static_cast<size_t>(i)] - last);
            auto& di = dist[static_cast<size_t>(i)];
            di = std::min(di, d);
            if (di > best_d) {
                best_d = di;
                best = i;
            }
        }
        idx.push_back(best);
    }
    return idx;
}

std::vector<sim::Vec3> sample_points(const sim::Observation& obs, int M, std::mt19937_64& rng) {
    if (obs.points.empty()) throw sim::DegenerateObservation("sample_points: empty cloud");
    auto idx = farthest_point_indices(obs.points, M, rng);
    std::vector<sim::Vec3> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = obs.points[static_cast<size_t>(idx[i])];
    return out;
}

SaPlan build_sa_plan(const std::vector<sim::Vec3>& pts, int n_centroids, float radius,
                     int max_neighbors, std::mt19937_64& rng) {
    SaPlan plan;
    plan.centroids = farthest_point_indices(pts, n_centroids, rng);
    plan.groups.resize(plan.centroids.size());
    const float r2 = radius * radius;
    std::vector<std::pair<float, int>> near;
    for (size_t g = 0; g < plan.centroids.size(); ++g) {
        const auto& c = pts[static_cast<size_t>(plan.centroids[g])];
        near.clear();
        for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
            const auto d = pts[static_cast<size_t>(i)] - c;
            const float d2 = d.dot(d);
            if (d2 <= r2) near.emplace_back(d2, i);
        }
        std::sort(near.begin(), near.end());
        const size_t take = std::min(near.size(), static_cast<size_t>(max_neighbors));
        for (size_t i = 0; i < take; ++i) plan.groups[g].push_back(near[i].second);
        if (plan.groups[g].empty()) plan.groups[g].push_back(plan.centroids[g]);
    }
    return plan;
}

PropPlan build_prop_plan(const std::vector<sim::Vec3>& from, const std::vector<sim::Vec3>& to) {
    if (from.empty()) throw std::invalid_argument("build_prop_plan: empty source set");
    PropPlan plan;
    plan.nn.resize(to.size());
    plan.w.resize(to.size());
    std::vector<std::pair<float, int>> d(from.size());
    for (size_t t = 0; t < to.size(); ++t) {
        for (size_t s = 0; s < from.size(); ++s) {
            const auto v = from[s] - to[t];
            d[s] = {v.dot(v), static_cast<int>(s)};
        }
        std::partial_sort(d.begin(), d.begin() + std::min<size_t>(3, d.size()), d.end());
        float wsum = 0;
        for (int j = 0; j < 3; ++j) {
            const auto& pick = d[std::min<size_t>(static_cast<size_t>(j), d.size() - 1)];
            plan.nn[t][static_cast<size_t>(j)] = pick.second;
            const float w = 1.0f / (std::sqrt(pick.first) + 1e-8f);
            plan.w[t][static_cast<size_t>(j)] = w;
            wsum += w;
        }
        for (auto& w : plan.w[t]) w /= wsum;
    }
    return plan;
}

PointEncodePlan plan_point_encode(const std::vector<sim::Vec3>& pts, std::mt19937_64& rng) {
    const int M = static_cast<int>(pts.size());
    if (M < 16) throw std::invalid_argument("plan_point_encode: need at least 16 points");
    const float diag = workspace_diagonal();
    PointEncodePlan plan;
    plan.sa1 = build_sa_plan(pts, M / 4, 0.25f * diag, 32, rng);
    plan.centroids1.resize(plan.sa1.centroids.size());
    for (size_t i = 0; i < plan.centroids1.size(); ++i)
        plan.centroids1[i] = pts[static_cast<size_t>(plan.sa1.centroids[i])];
    plan.sa2 = build_sa_plan(plan.centroids1, M / 16, 0.5f * diag, 32, rng);
    plan.centroids2.resize(plan.sa2.centroids.size());
    for (size_t i = 0; i < plan.centroids2.size(); ++i)
        plan.centroids2[i] = plan.centroids1[static_cast<size_t>(plan.sa2.centroids[i])];
    plan.prop1 = build_prop_plan(plan.centroids2, plan.centroids1);
    plan.prop2 = build_prop_plan(plan.centroids1, pts);
    return plan;
}

}  // namespace dnact
