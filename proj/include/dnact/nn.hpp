#pragma once

#include <random>

#include "dnact/ops.hpp"
#include "dnact/optim.hpp"

namespace dnact {

/// Affine layer y = xW + b with Kaiming-uniform init.
template <typename T>
struct LinearLayer {
    TensorT<T> w, b;

    LinearLayer() = default;
    template <typename Rng>
    LinearLayer(int in, int out, Rng& rng) {
        const T bound = std::sqrt(T(6) / static_cast<T>(in));
        w = TensorT<T>::uniform({in, out}, rng, -bound, bound);
        b = TensorT<T>::zeros({out});
    }

    TensorT<T> operator()(const TensorT<T>& x) const { return linear(x, w, b); }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        ps.add(prefix + ".w", w);
        ps.add(prefix + ".b", b);
    }
};

enum class Act { relu, leaky_relu, mish, sigmoid, tanh, none };

template <typename T>
TensorT<T> apply_act(const TensorT<T>& x, Act a) {
    switch (a) {
        case Act::relu: return relu(x);
        case Act::leaky_relu: return leaky_relu(x);
        case Act::mish: return mish(x);
        case Act::sigmoid: return sigmoid(x);
        case Act::tanh: return tanh_op(x);
        case Act::none: return x;
    }
    return x;
}

/// Plain MLP over row-batched inputs [M, d_in]; hidden activations between
/// layers, optional output activation.
template <typename T>
struct MLP {
    std::vector<LinearLayer<T>> layers;
    Act hidden = Act::relu;
    Act output = Act::none;

    MLP() = default;
    template <typename Rng>
    MLP(const std::vector<int>& widths, Rng& rng, Act hidden_act = Act::relu,
        Act output_act = Act::none)
        : hidden(hidden_act), output(output_act) {
        for (size_t i = 0; i + 1 < widths.size(); ++i)
            layers.emplace_back(widths[i], widths[i + 1], rng);
    }

    TensorT<T> operator()(TensorT<T> x) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](x);
            x = apply_act(x, i + 1 < layers.size() ? hidden : output);
        }
        return x;
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(ps, prefix + ".l" + std::to_string(i));
    }
};

/// Conv3d + BatchNorm + LeakyReLU block.
template <typename T>
struct ConvBlock3d {
    TensorT<T> w, b, gamma, beta;
    int stride = 1, pad = 1;

    ConvBlock3d() = default;
    template <typename Rng>
    ConvBlock3d(int cin, int cout, int k, int stride_, Rng& rng)
        : stride(stride_), pad(k / 2) {
        const T bound = std::sqrt(T(6) / static_cast<T>(cin * k * k * k));
        w = TensorT<T>::uniform({cout, cin, k, k, k}, rng, -bound, bound);
        b = TensorT<T>::zeros({cout});
        gamma = TensorT<T>::filled({cout}, T(1));
        beta = TensorT<T>::zeros({cout});
    }

    TensorT<T> operator()(const TensorT<T>& x) const {
        return leaky_relu(batch_norm(conv3d(x, w, b, stride, pad), gamma, beta));
    }

    void collect(ParameterSetT<T>& ps, const std::string& prefix) const {
        ps.add(prefix + ".w", w);
        ps.add(prefix + ".b", b);
        ps.add(prefix + ".gamma", gamma);
        ps.add(prefix + ".beta", beta);
    }
};

/// Sinusoidal embedding of an integer step index (data, not differentiated).
template <typename T>
std::vector<T> sinusoidal_embedding(int k, int dim) {
    std::vector<T> e(static_cast<size_t>(dim));
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        e[static_cast<size_t>(2 * i)] = static_cast<T>(std::sin(k * freq));
        e[static_cast<size_t>(2 * i + 1)] = static_cast<T>(std::cos(k * freq));
    }
    return e;
}

/// Fixed-frequency positional encoding of coordinates (data path, no grad):
/// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(...)] per dim.
template <typename T>
void positional_encode(const T* x, int dims, int octaves, T* out) {
    int j = 0;
    for (int d = 0; d < dims; ++d) out[j++] = x[d];
    for (int o = 0; o < octaves; ++o) {
        const T f = static_cast<T>(std::pow(2.0, o) * M_PI);
        for (int d = 0; d < dims; ++d) {
            out[j++] = std::sin(f * x[d]);
            out[j++] = std::cos(f * x[d]);
        }
    }
}

inline int positional_encode_dim(int dims, int octaves) { return dims * (1 + 2 * octaves); }

}  // namespace dnact
