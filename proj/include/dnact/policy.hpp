#pragma once

// Keyframe extraction, action discretization, the Q-value policy heads, the
// behavior-cloning loss, and the combined objective L = L_bc + lambda * L_diff.

#include "dnact/diffusion.hpp"
#include "dnact/nn.hpp"
#include "dnact/sim.hpp"

namespace dnact {

constexpr int kRotBins = 72;  // 5 degrees per bin per Euler axis

struct ActionKeyframe {
    sim::Vec3 trans;                 // meters, workspace frame
    std::array<int, 3> rot{0, 0, 0};  // bins in [0, 72)
    int open = 1;
    int collide = 1;
};

struct LossWeights {
    float trans = 300.0f;
    float rot = 1.0f;
    float open = 1.0f;
    float collide = 1.0f;
    float diff = 5.0f;
};

/// Frame indices whose velocity norm falls below `v_frac` of the demo's peak
/// speed while the gripper state is stable over [i-1, i+1]; runs collapse to
/// their last frame and the final frame is always included.
std::vector<size_t> extract_keyframes(const sim::Demonstration& demo, float v_frac = 0.05f);

/// Rounds Euler angles (degrees, [0, 360)) to 5-degree bins and thresholds
/// the open fraction.
ActionKeyframe discretize(const sim::Vec3& xyz, const std::array<float, 3>& euler_deg,
                          float open_fraction, bool collide);

struct NonFiniteLoss : std::runtime_error {
    std::string component;
    NonFiniteLoss(std::string component_, const std::string& what)
        : std::runtime_error(what), component(std::move(component_)) {}
};

template <typename T>
struct QValuesT {
    TensorT<T> trans;    // [1, 3] world coordinates
    TensorT<T> rot;      // [3, 72] logits
    TensorT<T> open;     // [1, 2] logits
    TensorT<T> collide;  // [1, 2] logits
};

using QValues = QValuesT<float>;

/// Independent translation MLP (sigmoid mapped to workspace bounds) plus a
/// shared trunk with rotation / open / collision logit branches.
template <typename T>
struct PolicyHeadsT {
    sim::Aabb workspace;
    MLP<T> trans_mlp, trunk;
    LinearLayer<T> rot_out, open_out, collide_out;

    PolicyHeadsT() = default;
    template <typename Rng>
    PolicyHeadsT(int in_dim, Rng& rng) : workspace(sim::default_workspace()) {
        trans_mlp = MLP<T>({in_dim, 128, 3}, rng, Act::relu, Act::sigmoid);
        trunk = MLP<T>({in_dim, 128, 128}, rng, Act::relu, Act::relu);
        rot_out = LinearLayer<T>(128, 3 * kRotBins, rng);
        open_out = LinearLayer<T>(128, 2, rng);
        collide_out = LinearLayer<T>(128, 2, rng);
    }

    QValuesT<T> operator()(const TensorT<T>& v_f) const {
        QValuesT<T> q;
        auto unit = trans_mlp(v_f);  // [1,3] in (0,1)
        std::vector<T> lo = {static_cast<T>(workspace.lo.x), static_cast<T>(workspace.lo.y),
                             static_cast<T>(workspace.lo.z)};
        std::vector<T> span = {static_cast<T>(workspace.hi.x - workspace.lo.x),
                               static_cast<T>(workspace.hi.y - workspace.lo.y),
                               static_cast<T>(workspace.hi.z - workspace.lo.z)};
        q.trans = add(mul(unit, TensorT<T>::from_data({1, 3}, std::move(span))),
                      TensorT<T>::from_data({1, 3}, std::move(lo)));
        auto h = trunk(v_f);
        q.rot = reshape(rot_out(h), {3, kRotBins});
        q.open = open_out(h);
        q.collide = collide_out(h);
        return q;
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        trans_mlp.collect(ps, prefix + ".trans");
        trunk.collect(ps, prefix + ".trunk");
        rot_out.collect(ps, prefix + ".rot");
        open_out.collect(ps, prefix + ".open");
        collide_out.collect(ps, prefix + ".collide");
    }
};

using PolicyHeads = PolicyHeadsT<float>;

/// Eq. 5: lambda_trans L1(trans) + per-axis rotation cross-entropy plus
/// open/collision cross-entropies.
template <typename T>
TensorT<T> bc_loss(const QValuesT<T>& q, const ActionKeyframe& y, const LossWeights& w) {
    for (int b : y.rot)
        if (b < 0 || b >= kRotBins) throw std::invalid_argument("bc_loss: rotation bin range");
    std::vector<T> target = {static_cast<T>(y.trans.x), static_cast<T>(y.trans.y),
                             static_cast<T>(y.trans.z)};
    auto l_trans = l1_loss_sum(q.trans, TensorT<T>::from_data({1, 3}, std::move(target)));
    auto l_rot = scale(cross_entropy_lastdim(q.rot, {y.rot[0], y.rot[1], y.rot[2]}), T(3));
    auto l_open = cross_entropy_lastdim(q.open, {y.open});
    auto l_collide = cross_entropy_lastdim(q.collide, {y.collide});
    return add(add(scale(l_trans, static_cast<T>(w.trans)), scale(l_rot, static_cast<T>(w.rot))),
               add(scale(l_open, static_cast<T>(w.open)),
                   scale(l_collide, static_cast<T>(w.collide))));
}

/// L = L_bc + lambda_diff * L_diff; lambda_diff = 0 skips the noise predictor
/// entirely. Throws NonFiniteLoss naming the sub-loss that went bad.
template <typename T>
TensorT<T> combined_loss(const PolicyHeadsT<T>& policy, const NoisePredictorT<T>& predictor,
                         const DiffusionSchedule& sched, const TensorT<T>& v_f,
                         const ActionSequence& a0, const ActionKeyframe& y, const LossWeights& w,
                         std::mt19937_64& rng) {
    auto bc = bc_loss(policy(v_f), y, w);
    if (!std::isfinite(static_cast<double>(bc.data()[0])))
        throw NonFiniteLoss("bc", "combined_loss: behavior-cloning loss is non-finite");
    if (w.diff == 0.0f) return bc;
    auto diff = diffusion_loss(predictor, sched, v_f, a0, rng);
    if (!std::isfinite(static_cast<double>(diff.data()[0])))
        throw NonFiniteLoss("diffusion", "combined_loss: diffusion loss is non-finite");
    return add(bc, scale(diff, static_cast<T>(w.diff)));
}

/// Argmax decode; ties break to the lowest index. Translation passes through.
template <typename T>
ActionKeyframe select_action(const QValuesT<T>& q) {
    for (const auto* t : {&q.trans, &q.rot, &q.open, &q.collide})
        for (std::int64_t i = 0; i < t->numel(); ++i)
            if (!std::isfinite(static_cast<double>(t->data()[i])))
                throw std::invalid_argument("select_action: non-finite Q-values");
    ActionKeyframe a;
    a.trans = {static_cast<float>(q.trans.data()[0]), static_cast<float>(q.trans.data()[1]),
               static_cast<float>(q.trans.data()[2])};
    auto argmax = [](const T* begin, int n) {
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (begin[i] > begin[best]) best = i;
        return best;
    };
    for (int axis = 0; axis < 3; ++axis)
        a.rot[static_cast<size_t>(axis)] = argmax(q.rot.data() + axis * kRotBins, kRotBins);
    a.open = argmax(q.open.data(), 2);
    a.collide = argmax(q.collide.data(), 2);
    return a;
}

}  // namespace dnact
