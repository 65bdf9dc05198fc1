#include "dnact/policy.hpp"

#include <cmath>

namespace dnact {

namespace {

// End-effector speed only; the open channel is covered by open_stable and its
// finite-difference spike would otherwise dominate the peak used for the
// threshold.
float speed(const sim::Frame& f) {
    return std::sqrt(f.velocity[0] * f.velocity[0] + f.velocity[1] * f.velocity[1] +
                     f.velocity[2] * f.velocity[2]);
}

bool open_stable(const sim::Demonstration& demo, size_t i) {
    const size_t n = demo.frames.size();
    const size_t lo = (i == 0) ? 0 : i - 1;
    const size_t hi = (i + 1 < n) ? i + 1 : n - 1;
    const float ref = demo.frames[i].open;
    return demo.frames[lo].open == ref && demo.frames[hi].open == ref;
}

}  // namespace

std::vector<size_t> extract_keyframes(const sim::Demonstration& demo, float v_frac) {
    const size_t n = demo.frames.size();
    if (n < 2) throw std::invalid_argument("extract_keyframes: need at least 2 frames");
    float peak = 0;
    for (const auto& f : demo.frames) peak = std::max(peak, speed(f));
    const float thresh = v_frac * peak;

    std::vector<size_t> keys;
    bool in_run = false;
    for (size_t i = 1; i < n; ++i) {
        const bool qualifies = speed(demo.frames[i]) < thresh && open_stable(demo, i);
        if (qualifies && !in_run) {
            keys.push_back(i);
            in_run = true;
        } else if (qualifies) {
            keys.back() = i;  // extend the run to its last frame
        } else {
            in_run = false;
        }
    }
    if (keys.empty() || keys.back() != n - 1) keys.push_back(n - 1);
    return keys;
}

ActionKeyframe discretize(const sim::Vec3& xyz, const std::array<float, 3>& euler_deg,
                          float open_fraction, bool collide) {
    ActionKeyframe a;
    a.trans = xyz;
    for (size_t i = 0; i < 3; ++i) {
        if (euler_deg[i] < 0.0f || euler_deg[i] >= 360.0f)
            throw std::invalid_argument("discretize: Euler angle outside [0, 360)");
        a.rot[i] = static_cast<int>(std::lround(euler_deg[i] / 5.0f)) % kRotBins;
    }
    a.open = open_fraction > 0.5f ? 1 : 0;
    a.collide = collide ? 1 : 0;
    return a;
}

}  // namespace dnact
