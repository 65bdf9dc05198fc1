#pragma once

// DDPM over keyframe action sequences, FiLM-conditioned on the fused feature
// v_f. Used as a representation-shaping auxiliary loss during policy training
// and as a standalone action sampler for the ablation path.

#include <random>

#include "dnact/nn.hpp"

namespace dnact {

constexpr int kSeqLen = 4;     // T_seq keyframes
constexpr int kActionDim = 8;  // xyz + euler + open + collide

/// Normalized action sequence stored channel-first [d_a, T_seq] for the 1D
/// convolutions; padded positions repeat the final keyframe and are masked.
struct ActionSequence {
    std::array<float, kActionDim * kSeqLen> a{};  // a[dim * kSeqLen + t]
    std::array<bool, kSeqLen> valid{};

    float& at(int dim, int t) { return a[static_cast<size_t>(dim * kSeqLen + t)]; }
    float at(int dim, int t) const { return a[static_cast<size_t>(dim * kSeqLen + t)]; }
};

/// Per-dimension min/max of the raw training actions; maps to [-1, 1].
struct ActionNormStats {
    std::array<float, kActionDim> lo{}, hi{};

    float normalize(int dim, float v) const {
        const float span = hi[static_cast<size_t>(dim)] - lo[static_cast<size_t>(dim)];
        if (span < 1e-8f) return 0.0f;
        return 2.0f * (v - lo[static_cast<size_t>(dim)]) / span - 1.0f;
    }
    float denormalize(int dim, float n) const {
        const float span = hi[static_cast<size_t>(dim)] - lo[static_cast<size_t>(dim)];
        if (span < 1e-8f) return lo[static_cast<size_t>(dim)];
        return (n + 1.0f) * 0.5f * span + lo[static_cast<size_t>(dim)];
    }
};

struct DiffusionSchedule {
    int K = 0;
    std::vector<double> beta, alpha, alpha_bar;  // 1-based via index k-1

    /// Linear beta schedule. The default endpoint is chosen so that at
    /// K = 50 the terminal signal fraction alpha_bar_K drops below 0.01 and
    /// sampling can start from a standard normal.
    static DiffusionSchedule linear(int K = 50, double beta_first = 1e-4,
                                    double beta_last = 0.25) {
        if (K < 2) throw std::invalid_argument("DiffusionSchedule: K must be >= 2");
        DiffusionSchedule s;
        s.K = K;
        s.beta.resize(static_cast<size_t>(K));
        s.alpha.resize(static_cast<size_t>(K));
        s.alpha_bar.resize(static_cast<size_t>(K));
        double prod = 1.0;
        for (int k = 0; k < K; ++k) {
            const double b =
                beta_first + (beta_last - beta_first) * static_cast<double>(k) / (K - 1);
            if (!(0.0 < b && b < 1.0))
                throw std::invalid_argument("DiffusionSchedule: beta out of (0,1)");
            if (k > 0 && b <= s.beta[static_cast<size_t>(k - 1)])
                throw std::invalid_argument("DiffusionSchedule: beta must increase");
            s.beta[static_cast<size_t>(k)] = b;
            s.alpha[static_cast<size_t>(k)] = 1.0 - b;
            prod *= 1.0 - b;
            s.alpha_bar[static_cast<size_t>(k)] = prod;
        }
        if (s.alpha_bar.back() >= 0.01)
            throw std::invalid_argument(
                "DiffusionSchedule: terminal alpha_bar too large for N(0,1) start");
        return s;
    }

    void check_step(int k) const {
        if (k < 1 || k > K)
            throw std::invalid_argument("DiffusionSchedule: step " + std::to_string(k) +
                                        " outside [1, " + std::to_string(K) + "]");
    }
    double ab(int k) const { return alpha_bar[static_cast<size_t>(k - 1)]; }
    double ab_prev(int k) const { return k > 1 ? alpha_bar[static_cast<size_t>(k - 2)] : 1.0; }
    /// Eq. 3 coefficients.
    double coef_alpha(int k) const {
        check_step(k);
        return 1.0 / std::sqrt(alpha[static_cast<size_t>(k - 1)]);
    }
    double coef_gamma(int k) const {
        check_step(k);
        return beta[static_cast<size_t>(k - 1)] / std::sqrt(1.0 - ab(k));
    }
    double sigma2(int k) const {
        check_step(k);
        return beta[static_cast<size_t>(k - 1)] * (1.0 - ab_prev(k)) / (1.0 - ab(k));
    }
};

/// Forward marginal: sqrt(ab_k) a0 + sqrt(1 - ab_k) eps.
template <typename T>
TensorT<T> add_noise(const TensorT<T>& a0, int k, const TensorT<T>& eps,
                     const DiffusionSchedule& sched) {
    sched.check_step(k);
    check_same_shape(a0, eps, "add_noise");
    const T s = static_cast<T>(std::sqrt(sched.ab(k)));
    const T n = static_cast<T>(std::sqrt(1.0 - sched.ab(k)));
    return add(scale(a0, s), scale(eps, n));
}

/// FiLM: out = gamma (.) x + beta, broadcast over sequence positions.
template <typename T>
TensorT<T> film_modulate(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta) {
    return channel_affine(x, gamma, beta);
}

namespace detail {

/// Splits a [1, 2C] conditioning projection into FiLM gamma (offset by one
/// so a zero projection is the identity) and beta.
template <typename T>
void split_film(const TensorT<T>& gb, int C, TensorT<T>& gamma, TensorT<T>& beta) {
    auto col = reshape(gb, {2 * C, 1});
    std::vector<int> lo(static_cast<size_t>(C)), hi(static_cast<size_t>(C));
    for (int i = 0; i < C; ++i) {
        lo[static_cast<size_t>(i)] = i;
        hi[static_cast<size_t>(i)] = C + i;
    }
    gamma = add_scalar(reshape(gather_rows(col, lo), {C}), T(1));
    beta = reshape(gather_rows(col, hi), {C});
}

}  // namespace detail

/// Conv1d -> GroupNorm -> Mish, FiLM after the first conv, residual 1x1.
template <typename T>
struct CondResBlock1d {
    TensorT<T> w1, b1, g1, be1, w2, b2, g2, be2, wr, br;
    LinearLayer<T> film;
    int groups = 4;

    CondResBlock1d() = default;
    template <typename Rng>
    CondResBlock1d(int cin, int cout, int cond_dim, Rng& rng) {
        auto conv_init = [&](int ci, int co, int k) {
            const T bound = std::sqrt(T(6) / static_cast<T>(ci * k));
            return TensorT<T>::uniform({co, ci, k}, rng, -bound, bound);
        };
        w1 = conv_init(cin, cout, 3);
        b1 = TensorT<T>::zeros({cout});
        g1 = TensorT<T>::filled({cout}, T(1));
        be1 = TensorT<T>::zeros({cout});
        w2 = conv_init(cout, cout, 3);
        b2 = TensorT<T>::zeros({cout});
        g2 = TensorT<T>::filled({cout}, T(1));
        be2 = TensorT<T>::zeros({cout});
        wr = conv_init(cin, cout, 1);
        br = TensorT<T>::zeros({cout});
        film = LinearLayer<T>(cond_dim, 2 * cout, rng);
    }

    TensorT<T> operator()(const TensorT<T>& x, const TensorT<T>& cond) const {
        const int C = w1.dim(0);
        auto h = mish(group_norm(conv1d(x, w1, b1, 1, 1), groups, g1, be1));
        TensorT<T> gamma, beta;
        detail::split_film(film(cond), C, gamma, beta);
        h = film_modulate(h, gamma, beta);
        h = mish(group_norm(conv1d(h, w2, b2, 1, 1), groups, g2, be2));
        return add(h, conv1d(x, wr, br, 1, 0));
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        ps.add(prefix + ".w1", w1);
        ps.add(prefix + ".b1", b1);
        ps.add(prefix + ".g1", g1);
        ps.add(prefix + ".be1", be1);
        ps.add(prefix + ".w2", w2);
        ps.add(prefix + ".b2", b2);
        ps.add(prefix + ".g2", g2);
        ps.add(prefix + ".be2", be2);
        ps.add(prefix + ".wr", wr);
        ps.add(prefix + ".br", br);
        film.collect(ps, prefix + ".film");
    }
};

/// 1D U-Net over the sequence axis predicting the added noise, conditioned on
/// v_f plus a sinusoidal embedding of the denoising step.
template <typename T>
struct NoisePredictorT {
    int cond_dim = 128;
    CondResBlock1d<T> enc1, enc2, mid, dec1, dec2;
    TensorT<T> down1_w, down1_b, down2_w, down2_b;  // stride-2 convs
    TensorT<T> up1_w, up1_b, up2_w, up2_b;          // stride-2 transposed convs
    TensorT<T> out_w, out_b;

    NoisePredictorT() = default;
    template <typename Rng>
    explicit NoisePredictorT(int cond, Rng& rng) : cond_dim(cond) {
        enc1 = CondResBlock1d<T>(kActionDim, 32, cond, rng);
        enc2 = CondResBlock1d<T>(32, 64, cond, rng);
        mid = CondResBlock1d<T>(64, 64, cond, rng);
        dec1 = CondResBlock1d<T>(128, 32, cond, rng);
        dec2 = CondResBlock1d<T>(64, 32, cond, rng);
        auto conv_init = [&](Shape s, int fan_in) {
            const T bound = std::sqrt(T(6) / static_cast<T>(fan_in));
            return TensorT<T>::uniform(s, rng, -bound, bound);
        };
        down1_w = conv_init({32, 32, 3}, 32 * 3);
        down1_b = TensorT<T>::zeros({32});
        down2_w = conv_init({64, 64, 3}, 64 * 3);
        down2_b = TensorT<T>::zeros({64});
        up1_w = conv_init({64, 64, 4}, 64 * 4);  // [Ci, Co, k] for transpose
        up1_b = TensorT<T>::zeros({64});
        up2_w = conv_init({32, 32, 4}, 32 * 4);
        up2_b = TensorT<T>::zeros({32});
        out_w = conv_init({kActionDim, 32, 3}, 32 * 3);
        out_b = TensorT<T>::zeros({kActionDim});
    }

    /// x: [d_a, T_seq] noisy sequence; cond: [1, cond_dim].
    TensorT<T> operator()(const TensorT<T>& x, const TensorT<T>& cond) const {
        if (x.dim(0) != kActionDim || x.dim(1) != kSeqLen)
            throw std::invalid_argument("NoisePredictor: bad sequence shape");
        auto e1 = enc1(x, cond);                                  // [32, 4]
        auto h = conv1d(e1, down1_w, down1_b, 2, 1);              // [32, 2]
        auto e2 = enc2(h, cond);                                  // [64, 2]
        h = conv1d(e2, down2_w, down2_b, 2, 1);                   // [64, 1]
        h = mid(h, cond);                                         // [64, 1]
        h = conv_transpose1d(h, up1_w, up1_b, 2, 1);              // [64, 2]
        h = dec1(concat<T>({h, e2}, 0), cond);                    // [32, 2]
        h = conv_transpose1d(h, up2_w, up2_b, 2, 1);              // [32, 4]
        h = dec2(concat<T>({h, e1}, 0), cond);                    // [32, 4]
        return conv1d(h, out_w, out_b, 1, 1);                     // [d_a, 4]
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        enc1.collect(ps, prefix + ".enc1");
        enc2.collect(ps, prefix + ".enc2");
        mid.collect(ps, prefix + ".mid");
        dec1.collect(ps, prefix + ".dec1");
        dec2.collect(ps, prefix + ".dec2");
        ps.add(prefix + ".down1.w", down1_w);
        ps.add(prefix + ".down1.b", down1_b);
        ps.add(prefix + ".down2.w", down2_w);
        ps.add(prefix + ".down2.b", down2_b);
        ps.add(prefix + ".up1.w", up1_w);
        ps.add(prefix + ".up1.b", up1_b);
        ps.add(prefix + ".up2.w", up2_w);
        ps.add(prefix + ".up2.b", up2_b);
        ps.add(prefix + ".out.w", out_w);
        ps.add(prefix + ".out.b", out_b);
    }
};

using NoisePredictor = NoisePredictorT<float>;

/// Conditioning vector: v_f plus a sinusoidal embedding of step k.
template <typename T>
TensorT<T> diffusion_condition(const TensorT<T>& v_f, int k, int cond_dim) {
    if (v_f.dim(1) != cond_dim)
        throw std::invalid_argument("diffusion_condition: v_f width mismatch");
    auto emb = sinusoidal_embedding<T>(k, cond_dim);
    return add(v_f, TensorT<T>::from_data({1, cond_dim}, std::move(emb)));
}

/// Eq. 4: mean squared error between the drawn noise and the prediction at a
/// uniformly drawn step, averaged over valid (unpadded) sequence positions.
template <typename T>
TensorT<T> diffusion_loss(const NoisePredictorT<T>& predictor, const DiffusionSchedule& sched,
                          const TensorT<T>& v_f, const ActionSequence& a0,
                          std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick_k(1, sched.K);
    const int k = pick_k(rng);
    std::vector<T> adata(a0.a.begin(), a0.a.end());
    auto a0t = TensorT<T>::from_data({kActionDim, kSeqLen}, std::move(adata));
    auto eps = TensorT<T>::randn({kActionDim, kSeqLen}, rng);
    auto noisy = add_noise(a0t, k, eps, sched);
    auto pred = predictor(noisy, diffusion_condition(v_f, k, predictor.cond_dim));

    std::vector<T> mask(static_cast<size_t>(kActionDim * kSeqLen), T(0));
    int n_valid = 0;
    for (int t = 0; t < kSeqLen; ++t)
        if (a0.valid[static_cast<size_t>(t)]) ++n_valid;
    if (n_valid == 0) throw std::invalid_argument("diffusion_loss: no valid positions");
    for (int d = 0; d < kActionDim; ++d)
        for (int t = 0; t < kSeqLen; ++t)
            if (a0.valid[static_cast<size_t>(t)]) mask[static_cast<size_t>(d * kSeqLen + t)] = T(1);
    auto diff = mask_mul(sub(pred, eps), mask);
    return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(n_valid * kActionDim));
}

struct SamplingError : std::runtime_error {
    int step;
    SamplingError(int step_, const std::string& what) : std::runtime_error(what), step(step_) {}
};

/// Full reverse process (Eq. 3): starts from a standard normal sequence and
/// denoises for k = K..1, sigma = 0 at the final step; de-normalizes with the
/// stored per-dimension statistics.
template <typename T>
ActionSequence sample_actions(const NoisePredictorT<T>& predictor, const DiffusionSchedule& sched,
                              const TensorT<T>& v_f, const ActionNormStats& stats,
                              std::mt19937_64& rng, bool noiseless = false) {
    std::normal_distribution<T> gauss(T(0), T(1));
    std::vector<T> a(static_cast<size_t>(kActionDim * kSeqLen));
    for (auto& v : a) v = gauss(rng);
    for (int k = sched.K; k >= 1; --k) {
        auto xt = TensorT<T>::from_data({kActionDim, kSeqLen}, a);
        auto eps = predictor(xt, diffusion_condition(v_f, k, predictor.cond_dim));
        const T ca = static_cast<T>(sched.coef_alpha(k));
        const T cg = static_cast<T>(sched.coef_gamma(k));
        const T sigma = (k > 1 && !noiseless) ? static_cast<T>(std::sqrt(sched.sigma2(k))) : T(0);
        for (size_t i = 0; i < a.size(); ++i) {
            const T z = sigma > T(0) ? gauss(rng) : T(0);
            a[i] = ca * (a[i] - cg * eps.data()[static_cast<std::int64_t>(i)] + sigma * z);
            if (!std::isfinite(static_cast<double>(a[i])))
                throw SamplingError(k, "sample_actions: non-finite value at step " +
                                           std::to_string(k));
        }
    }
    ActionSequence out;
    out.valid.fill(true);
    for (int d = 0; d < kActionDim; ++d)
        for (int t = 0; t < kSeqLen; ++t)
            out.at(d, t) = stats.denormalize(d, static_cast<float>(a[static_cast<size_t>(d * kSeqLen + t)]));
    return out;
}

}  // namespace dnact
