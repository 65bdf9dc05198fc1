#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "dnact/tensor.hpp"

namespace dnact {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    auto out = make_op<T>(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
    });
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "sub");
    auto out = make_op<T>(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
    });
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "mul");
    auto out = make_op<T>(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
    });
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node(), c](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
    });
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * c;
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    });
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + c;
    return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    auto out = make_op<T>({1}, {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (auto& g : an->grad) g += o.grad[0];
    });
    T s = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += a.data()[i];
    out.data()[0] = s;
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                    shape_str(shape));
    auto out = make_op<T>(std::move(shape), {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    });
    std::copy(a.data(), a.data() + a.numel(), out.data());
    return out;
}

/// Concatenation along an arbitrary axis.
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Shape shape = parts[0].shape();
    int cat = 0;
    for (auto& p : parts) {
        if (p.ndim() != static_cast<int>(shape.size()))
            throw std::invalid_argument("concat: rank mismatch");
        for (int d = 0; d < p.ndim(); ++d)
            if (d != axis && p.dim(d) != shape[static_cast<size_t>(d)])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()));
        cat += p.dim(axis);
    }
    shape[static_cast<size_t>(axis)] = cat;

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= shape[static_cast<size_t>(d)];
    for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d)
        inner *= shape[static_cast<size_t>(d)];

    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (auto& p : parts) nodes.push_back(p.node());
    auto out = make_op<T>(shape, parts, [nodes, axis, outer, inner, cat](TensorNode<T>& o) {
        std::int64_t off = 0;
        for (auto& n : nodes) {
            std::int64_t w = n->shape[static_cast<size_t>(axis)] * inner;
            if (n->requires_grad)
                for (std::int64_t r = 0; r < outer; ++r)
                    for (std::int64_t j = 0; j < w; ++j)
                        n->grad[static_cast<size_t>(r * w + j)] +=
                            o.grad[static_cast<size_t>(r * cat * inner + off + j)];
            off += w;
        }
    });
    std::int64_t off = 0;
    for (auto& p : parts) {
        std::int64_t w = p.dim(axis) * inner;
        for (std::int64_t r = 0; r < outer; ++r)
            std::copy(p.data() + r * w, p.data() + (r + 1) * w,
                      out.data() + r * cat * inner + off);
        off += w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_op<T>({m, n}, {a, b}, [an = a.node(), bn = b.node(), m, k, n](TensorNode<T>& o) {
        ConstMatMap<T> A(an->data.data(), m, k), B(bn->data.data(), k, n);
        ConstMatMap<T> dC(o.grad.data(), m, n);
        if (an->requires_grad) {
            MatMap<T> dA(an->grad.data(), m, k);
            dA.noalias() += dC * B.transpose();
        }
        if (bn->requires_grad) {
            MatMap<T> dB(bn->grad.data(), k, n);
            dB.noalias() += A.transpose() * dC;
        }
    });
    ConstMatMap<T> A(a.data(), m, k), B(b.data(), k, n);
    MatMap<T> C(out.data(), m, n);
    C.noalias() = A * B;
    return out;
}

/// x[m,k] * W[k,n] + b[n], the workhorse of every MLP here.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1))
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                                    shape_str(w.shape()) + " + " + shape_str(b.shape()));
    const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
    auto out = make_op<T>(
        {m, n}, {x, w, b}, [xn = x.node(), wn = w.node(), bn = b.node(), m, k, n](TensorNode<T>& o) {
            ConstMatMap<T> X(xn->data.data(), m, k), W(wn->data.data(), k, n);
            ConstMatMap<T> dY(o.grad.data(), m, n);
            if (xn->requires_grad) {
                MatMap<T> dX(xn->grad.data(), m, k);
                dX.noalias() += dY * W.transpose();
            }
            if (wn->requires_grad) {
                MatMap<T> dW(wn->grad.data(), k, n);
                dW.noalias() += X.transpose() * dY;
            }
            if (bn->requires_grad) {
                Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bn->grad.data(), n);
                db.noalias() += dY.colwise().sum().transpose();
            }
        });
    ConstMatMap<T> X(x.data(), m, k), W(w.data(), k, n);
    MatMap<T> Y(out.data(), m, n);
    Y.noalias() = X * W;
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), n);
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i)
                if (an->data[i] > T(0)) an->grad[i] += o.grad[i];
    });
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = std::max(a.data()[i], T(0));
    return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, T slope = T(0.01)) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node(), slope](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i)
                an->grad[i] += o.grad[i] * (an->data[i] > T(0) ? T(1) : slope);
    });
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        T v = a.data()[i];
        out.data()[i] = v > T(0) ? v : slope * v;
    }
    return out;
}

template <typename T>
T sigmoid_val(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) {
                T y = o.data[i];
                an->grad[i] += o.grad[i] * y * (T(1) - y);
            }
    });
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = sigmoid_val(a.data()[i]);
    return out;
}

template <typename T>
T softplus_val(T x) {
    // log(1 + e^x), stable for large |x|
    return x > T(20) ? x : std::log1p(std::exp(std::min(x, T(20))));
}

template <typename T>
TensorT<T> softplus(const TensorT<T>& a) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i)
                an->grad[i] += o.grad[i] * sigmoid_val(an->data[i]);
    });
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = softplus_val(a.data()[i]);
    return out;
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& a) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node()](TensorNode<T>& o) {
        if (an->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) {
                T y = o.data[i];
                an->grad[i] += o.grad[i] * (T(1) - y * y);
            }
    });
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = std::tanh(a.data()[i]);
    return out;
}

/// mish(x) = x * tanh(softplus(x))
template <typename T>
TensorT<T> mish(const TensorT<T>& a) {
    auto out = make_op<T>(a.shape(), {a}, [an = a.node()](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        for (size_t i = 0; i < o.grad.size(); ++i) {
            T x = an->data[i];
            T t = std::tanh(softplus_val(x));
            an->grad[i] += o.grad[i] * (t + x * (T(1) - t * t) * sigmoid_val(x));
        }
    });
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        T x = a.data()[i];
        out.data()[i] = x * std::tanh(softplus_val(x));
    }
    return out;
}

/// Softmax over the last dimension, computed with max-subtraction.
template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& a) {
    if (a.ndim() < 1 || a.dim(a.ndim() - 1) < 1)
        throw std::invalid_argument("softmax: last dimension must be >= 1");
    const std::int64_t n = a.dim(a.ndim() - 1);
    const std::int64_t rows = a.numel() / n;
    auto out = make_op<T>(a.shape(), {a}, [an = a.node(), rows, n](TensorNode<T>& o) {
        if (!an->requires_grad) return;
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = o.data.data() + r * n;
            const T* dy = o.grad.data() + r * n;
            T dot = 0;
            for (std::int64_t j = 0; j < n; ++j) dot += y[j] * dy[j];
            T* dx = an->grad.data() + r * n;
            for (std::int64_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* x = a.data() + r * n;
        T* y = out.data() + r * n;
        T mx = x[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        T s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
        for (std::int64_t j = 0; j < n; ++j) y[j] /= s;
    }
    return out;
}

/// -log softmax(logits)[target] over the last dimension; mean over rows.
template <typename T>
TensorT<T> cross_entropy_lastdim(const TensorT<T>& logits, const std::vector<int>& targets) {
    const std::int64_t n = logits.dim(logits.ndim() - 1);
    const std::int64_t rows = logits.numel() / n;
    if (static_cast<std::int64_t>(targets.size()) != rows)
        throw std::invalid_argument("cross_entropy: target count mismatch");
    auto out = make_op<T>({1}, {logits}, [ln = logits.node(), targets, rows, n](TensorNode<T>& o) {
        if (!ln->requires_grad) return;
        const T g = o.grad[0] / static_cast<T>(rows);
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* x = ln->data.data() + r * n;
            T mx = x[0];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            T s = 0;
            for (std::int64_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
            T* dx = ln->grad.data() + r * n;
            for (std::int64_t j = 0; j < n; ++j) {
                T p = std::exp(x[j] - mx) / s;
                dx[j] += g * (p - (j == targets[static_cast<size_t>(r)] ? T(1) : T(0)));
            }
        }
    });
    T loss = 0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* x = logits.data() + r * n;
        T mx = x[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        T s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
        loss += std::log(s) - (x[targets[static_cast<size_t>(r)]] - mx);
    }
    out.data()[0] = loss / static_cast<T>(rows);
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

namespace detail {

// Shared normalization backward for a contiguous block of m elements with
// per-block statistics: dx from dxhat.
template <typename T>
void norm_block_backward(const T* xhat, const T* dxhat, T inv_std, std::int64_t m, T* dx_add) {
    T sum_d = 0, sum_dx = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        sum_d += dxhat[i];
        sum_dx += dxhat[i] * xhat[i];
    }
    const T inv_m = T(1) / static_cast<T>(m);
    for (std::int64_t i = 0; i < m; ++i)
        dx_add[i] += inv_std * (dxhat[i] - inv_m * sum_d - xhat[i] * inv_m * sum_dx);
}

}  // namespace detail

/// Group normalization over x[C, spatial...]: statistics per group of C/G
/// channels, affine per channel. Running in "always-training" mode.
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5)) {
    const int C = x.dim(0);
    if (C % groups != 0)
        throw std::invalid_argument("group_norm: channels " + std::to_string(C) +
                                    " not divisible by groups " + std::to_string(groups));
    if (gamma.dim(0) != C || beta.dim(0) != C)
        throw std::invalid_argument("group_norm: affine parameter shape mismatch");
    const std::int64_t spatial = x.numel() / C;
    const int cpg = C / groups;
    const std::int64_t m = cpg * spatial;

    // Cache normalized values and inverse stddevs for backward.
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        const T* xs = x.data() + static_cast<std::int64_t>(g) * m;
        T mu = 0;
        for (std::int64_t i = 0; i < m; ++i) mu += xs[i];
        mu /= static_cast<T>(m);
        T var = 0;
        for (std::int64_t i = 0; i < m; ++i) var += (xs[i] - mu) * (xs[i] - mu);
        var /= static_cast<T>(m);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(g)] = is;
        T* xh = xhat->data() + static_cast<std::int64_t>(g) * m;
        for (std::int64_t i = 0; i < m; ++i) xh[i] = (xs[i] - mu) * is;
    }

    auto out = make_op<T>(
        x.shape(), {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, inv_std, groups, cpg, spatial,
         m](TensorNode<T>& o) {
            const int C = groups * cpg;
            if (gn->requires_grad || bn->requires_grad) {
                for (int c = 0; c < C; ++c) {
                    T dg = 0, db = 0;
                    const T* dy = o.grad.data() + static_cast<std::int64_t>(c) * spatial;
                    const T* xh = xhat->data() + static_cast<std::int64_t>(c) * spatial;
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        dg += dy[i] * xh[i];
                        db += dy[i];
                    }
                    if (gn->requires_grad) gn->grad[static_cast<size_t>(c)] += dg;
                    if (bn->requires_grad) bn->grad[static_cast<size_t>(c)] += db;
                }
            }
            if (!xn->requires_grad) return;
            std::vector<T> dxhat(static_cast<size_t>(m));
            for (int g = 0; g < groups; ++g) {
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = g * cpg + cc;
                    const T* dy = o.grad.data() + static_cast<std::int64_t>(c) * spatial;
                    T ga = gn->data[static_cast<size_t>(c)];
                    for (std::int64_t i = 0; i < spatial; ++i)
                        dxhat[static_cast<size_t>(cc * spatial + i)] = dy[i] * ga;
                }
                detail::norm_block_backward(xhat->data() + static_cast<std::int64_t>(g) * m,
                                            dxhat.data(), (*inv_std)[static_cast<size_t>(g)], m,
                                            xn->grad.data() + static_cast<std::int64_t>(g) * m);
            }
        });
    for (int c = 0; c < C; ++c) {
        const T* xh = xhat->data() + static_cast<std::int64_t>(c) * spatial;
        T* y = out.data() + static_cast<std::int64_t>(c) * spatial;
        const T ga = gamma.data()[c], be = beta.data()[c];
        for (std::int64_t i = 0; i < spatial; ++i) y[i] = ga * xh[i] + be;
    }
    return out;
}

/// Batch normalization in training mode over x[C, spatial...]: per-channel
/// statistics over all non-channel elements.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
    return group_norm(x, x.dim(0), gamma, beta, eps);
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

inline int conv_out_size(int s, int k, int stride, int pad, const char* op) {
    int o = (s + 2 * pad - k) / stride + 1;
    if (s + 2 * pad < k || o <= 0)
        throw std::invalid_argument(std::string(op) + ": non-positive output size for input " +
                                    std::to_string(s) + ", kernel " + std::to_string(k));
    return o;
}

namespace detail {

template <typename T>
void im2col3d(const T* x, int Ci, int D, int H, int W, int k, int stride, int pad, int Do, int Ho,
              int Wo, T* col) {
    // col layout: [Ci*k^3, Do*Ho*Wo]
    const std::int64_t ncol = static_cast<std::int64_t>(Do) * Ho * Wo;
    std::int64_t row = 0;
    for (int c = 0; c < Ci; ++c)
        for (int kd = 0; kd < k; ++kd)
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw, ++row) {
                    T* dst = col + row * ncol;
                    std::int64_t i = 0;
                    for (int od = 0; od < Do; ++od) {
                        const int d = od * stride - pad + kd;
                        for (int oh = 0; oh < Ho; ++oh) {
                            const int h = oh * stride - pad + kh;
                            const bool in_dh = d >= 0 && d < D && h >= 0 && h < H;
                            for (int ow = 0; ow < Wo; ++ow, ++i) {
                                const int w = ow * stride - pad + kw;
                                dst[i] = (in_dh && w >= 0 && w < W)
                                             ? x[(static_cast<std::int64_t>(c) * D + d) * H * W +
                                                 static_cast<std::int64_t>(h) * W + w]
                                             : T(0);
                            }
                        }
                    }
                }
}

template <typename T>
void col2im3d_add(const T* col, int Ci, int D, int H, int W, int k, int stride, int pad, int Do,
                  int Ho, int Wo, T* dx_add) {
    const std::int64_t ncol = static_cast<std::int64_t>(Do) * Ho * Wo;
    std::int64_t row = 0;
    for (int c = 0; c < Ci; ++c)
        for (int kd = 0; kd < k; ++kd)
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw, ++row) {
                    const T* src = col + row * ncol;
                    std::int64_t i = 0;
                    for (int od = 0; od < Do; ++od) {
                        const int d = od * stride - pad + kd;
                        for (int oh = 0; oh < Ho; ++oh) {
                            const int h = oh * stride - pad + kh;
                            const bool in_dh = d >= 0 && d < D && h >= 0 && h < H;
                            for (int ow = 0; ow < Wo; ++ow, ++i) {
                                const int w = ow * stride - pad + kw;
                                if (in_dh && w >= 0 && w < W)
                                    dx_add[(static_cast<std::int64_t>(c) * D + d) * H * W +
                                           static_cast<std::int64_t>(h) * W + w] += src[i];
                            }
                        }
                    }
                }
}

}  // namespace detail

/// 3-D cross-correlation: x[Ci,D,H,W] * w[Co,Ci,k,k,k] + b[Co].
template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                  int pad) {
    if (x.ndim() != 4 || w.ndim() != 5 || x.dim(0) != w.dim(1))
        throw std::invalid_argument("conv3d: incompatible shapes " + shape_str(x.shape()) +
                                    " vs " + shape_str(w.shape()));
    const int Ci = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), k = w.dim(2);
    if (k % 2 == 0) throw std::invalid_argument("conv3d: kernel size must be odd");
    const int Do = conv_out_size(D, k, stride, pad, "conv3d");
    const int Ho = conv_out_size(H, k, stride, pad, "conv3d");
    const int Wo = conv_out_size(W, k, stride, pad, "conv3d");
    const std::int64_t krows = static_cast<std::int64_t>(Ci) * k * k * k;
    const std::int64_t ncol = static_cast<std::int64_t>(Do) * Ho * Wo;

    auto out = make_op<T>(
        {Co, Do, Ho, Wo}, {x, w, b},
        [xn = x.node(), wn = w.node(), bn = b.node(), Ci, D, H, W, Co, k, stride, pad, Do, Ho, Wo,
         krows, ncol](TensorNode<T>& o) {
            std::vector<T> col(static_cast<size_t>(krows * ncol));
            detail::im2col3d(xn->data.data(), Ci, D, H, W, k, stride, pad, Do, Ho, Wo, col.data());
            ConstMatMap<T> dY(o.grad.data(), Co, ncol);
            if (wn->requires_grad) {
                ConstMatMap<T> Col(col.data(), krows, ncol);
                MatMap<T> dW(wn->grad.data(), Co, krows);
                dW.noalias() += dY * Col.transpose();
            }
            if (bn->requires_grad)
                for (int c = 0; c < Co; ++c)
                    bn->grad[static_cast<size_t>(c)] += dY.row(c).sum();
            if (xn->requires_grad) {
                ConstMatMap<T> Wm(wn->data.data(), Co, krows);
                MatMap<T> dCol(col.data(), krows, ncol);  // reuse buffer
                dCol.noalias() = Wm.transpose() * dY;
                detail::col2im3d_add(col.data(), Ci, D, H, W, k, stride, pad, Do, Ho, Wo,
                                     xn->grad.data());
            }
        });
    std::vector<T> col(static_cast<size_t>(krows * ncol));
    detail::im2col3d(x.data(), Ci, D, H, W, k, stride, pad, Do, Ho, Wo, col.data());
    ConstMatMap<T> Wm(w.data(), Co, krows), Col(col.data(), krows, ncol);
    MatMap<T> Y(out.data(), Co, ncol);
    Y.noalias() = Wm * Col;
    for (int c = 0; c < Co; ++c) Y.row(c).array() += b.data()[c];
    return out;
}

/// Nearest-neighbour spatial upsampling by an integer factor: x[C,D,H,W].
template <typename T>
TensorT<T> upsample_nearest3d(const TensorT<T>& x, int f) {
    const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Do = D * f, Ho = H * f, Wo = W * f;
    auto idx = [&](int c, int d, int h, int w, int DD, int HH, int WW) {
        return ((static_cast<std::int64_t>(c) * DD + d) * HH + h) * WW + w;
    };
    auto out = make_op<T>({C, Do, Ho, Wo}, {x},
                          [xn = x.node(), C, D, H, W, f, Do, Ho, Wo, idx](TensorNode<T>& o) {
                              if (!xn->requires_grad) return;
                              for (int c = 0; c < C; ++c)
                                  for (int d = 0; d < Do; ++d)
                                      for (int h = 0; h < Ho; ++h)
                                          for (int w = 0; w < Wo; ++w)
                                              xn->grad[static_cast<size_t>(
                                                  idx(c, d / f, h / f, w / f, D, H, W))] +=
                                                  o.grad[static_cast<size_t>(
                                                      idx(c, d, h, w, Do, Ho, Wo))];
                          });
    for (int c = 0; c < C; ++c)
        for (int d = 0; d < Do; ++d)
            for (int h = 0; h < Ho; ++h)
                for (int w = 0; w < Wo; ++w)
                    out.data()[idx(c, d, h, w, Do, Ho, Wo)] =
                        x.data()[idx(c, d / f, h / f, w / f, D, H, W)];
    return out;
}

/// 1-D cross-correlation over the sequence axis: x[Ci,L] * w[Co,Ci,k] + b[Co].
template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                  int pad) {
    if (x.ndim() != 2 || w.ndim() != 3 || x.dim(0) != w.dim(1))
        throw std::invalid_argument("conv1d: incompatible shapes " + shape_str(x.shape()) +
                                    " vs " + shape_str(w.shape()));
    const int Ci = x.dim(0), L = x.dim(1), Co = w.dim(0), k = w.dim(2);
    const int Lo = conv_out_size(L, k, stride, pad, "conv1d");
    auto out = make_op<T>(
        {Co, Lo}, {x, w, b},
        [xn = x.node(), wn = w.node(), bn = b.node(), Ci, L, Co, k, stride, pad,
         Lo](TensorNode<T>& o) {
            for (int co = 0; co < Co; ++co)
                for (int ol = 0; ol < Lo; ++ol) {
                    const T dy = o.grad[static_cast<size_t>(co * Lo + ol)];
                    if (bn->requires_grad) bn->grad[static_cast<size_t>(co)] += dy;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int kk = 0; kk < k; ++kk) {
                            const int l = ol * stride - pad + kk;
                            if (l < 0 || l >= L) continue;
                            const size_t wi = static_cast<size_t>((co * Ci + ci) * k + kk);
                            const size_t xi = static_cast<size_t>(ci * L + l);
                            if (wn->requires_grad) wn->grad[wi] += dy * xn->data[xi];
                            if (xn->requires_grad) xn->grad[xi] += dy * wn->data[wi];
                        }
                }
        });
    for (int co = 0; co < Co; ++co)
        for (int ol = 0; ol < Lo; ++ol) {
            T acc = b.data()[co];
            for (int ci = 0; ci < Ci; ++ci)
                for (int kk = 0; kk < k; ++kk) {
                    const int l = ol * stride - pad + kk;
                    if (l >= 0 && l < L)
                        acc += x.data()[ci * L + l] * w.data()[(co * Ci + ci) * k + kk];
                }
            out.data()[co * Lo + ol] = acc;
        }
    return out;
}

/// Transposed 1-D convolution: x[Ci,L] -> [Co, (L-1)*stride - 2*pad + k],
/// w[Ci,Co,k].
template <typename T>
TensorT<T> conv_transpose1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                            int stride, int pad) {
    if (x.ndim() != 2 || w.ndim() != 3 || x.dim(0) != w.dim(0))
        throw std::invalid_argument("conv_transpose1d: incompatible shapes " +
                                    shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    const int Ci = x.dim(0), L = x.dim(1), Co = w.dim(1), k = w.dim(2);
    const int Lo = (L - 1) * stride - 2 * pad + k;
    if (Lo <= 0) throw std::invalid_argument("conv_transpose1d: non-positive output size");
    auto out = make_op<T>(
        {Co, Lo}, {x, w, b},
        [xn = x.node(), wn = w.node(), bn = b.node(), Ci, L, Co, k, stride, pad,
         Lo](TensorNode<T>& o) {
            if (bn->requires_grad)
                for (int co = 0; co < Co; ++co)
                    for (int ol = 0; ol < Lo; ++ol)
                        bn->grad[static_cast<size_t>(co)] +=
                            o.grad[static_cast<size_t>(co * Lo + ol)];
            for (int ci = 0; ci < Ci; ++ci)
                for (int l = 0; l < L; ++l) {
                    const size_t xi = static_cast<size_t>(ci * L + l);
                    for (int co = 0; co < Co; ++co)
                        for (int kk = 0; kk < k; ++kk) {
                            const int ol = l * stride - pad + kk;
                            if (ol < 0 || ol >= Lo) continue;
                            const size_t wi = static_cast<size_t>((ci * Co + co) * k + kk);
                            const T dy = o.grad[static_cast<size_t>(co * Lo + ol)];
                            if (xn->requires_grad) xn->grad[xi] += dy * wn->data[wi];
                            if (wn->requires_grad) wn->grad[wi] += dy * xn->data[xi];
                        }
                }
        });
    for (int co = 0; co < Co; ++co)
        for (int ol = 0; ol < Lo; ++ol) out.data()[co * Lo + ol] = b.data()[co];
    for (int ci = 0; ci < Ci; ++ci)
        for (int l = 0; l < L; ++l) {
            const T xv = x.data()[ci * L + l];
            for (int co = 0; co < Co; ++co)
                for (int kk = 0; kk < k; ++kk) {
                    const int ol = l * stride - pad + kk;
                    if (ol >= 0 && ol < Lo)
                        out.data()[co * Lo + ol] += xv * w.data()[(ci * Co + co) * k + kk];
                }
        }
    return out;
}

// ---------------------------------------------------------------------------
// losses & misc
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    auto d = sub(pred, target);
    return mean(mul(d, d));
}

template <typename T>
TensorT<T> l1_loss_sum(const TensorT<T>& pred, const TensorT<T>& target) {
    check_same_shape(pred, target, "l1_loss");
    auto out = make_op<T>({1}, {pred, target}, [pn = pred.node(), tn = target.node()](TensorNode<T>& o) {
        if (pn->requires_grad)
            for (size_t i = 0; i < pn->data.size(); ++i) {
                T d = pn->data[i] - tn->data[i];
                pn->grad[i] += o.grad[0] * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
            }
    });
    T s = 0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) s += std::abs(pred.data()[i] - target.data()[i]);
    out.data()[0] = s;
    return out;
}

/// Per-channel affine modulation of x[C, spatial...]: gamma[C] * x + beta[C].
template <typename T>
TensorT<T> channel_affine(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta) {
    const int C = x.dim(0);
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("channel_affine: channel count mismatch " +
                                    shape_str(x.shape()) + " vs " + shape_str(gamma.shape()));
    const std::int64_t spatial = x.numel() / C;
    auto out = make_op<T>(
        x.shape(), {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), C, spatial](TensorNode<T>& o) {
            for (int c = 0; c < C; ++c) {
                const T* dy = o.grad.data() + static_cast<std::int64_t>(c) * spatial;
                const T* xs = xn->data.data() + static_cast<std::int64_t>(c) * spatial;
                if (xn->requires_grad) {
                    T* dx = xn->grad.data() + static_cast<std::int64_t>(c) * spatial;
                    const T g = gn->data[static_cast<size_t>(c)];
                    for (std::int64_t i = 0; i < spatial; ++i) dx[i] += dy[i] * g;
                }
                if (gn->requires_grad || bn->requires_grad) {
                    T dg = 0, db = 0;
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        dg += dy[i] * xs[i];
                        db += dy[i];
                    }
                    if (gn->requires_grad) gn->grad[static_cast<size_t>(c)] += dg;
                    if (bn->requires_grad) bn->grad[static_cast<size_t>(c)] += db;
                }
            }
        });
    for (int c = 0; c < C; ++c) {
        const T g = gamma.data()[c], be = beta.data()[c];
        const T* xs = x.data() + static_cast<std::int64_t>(c) * spatial;
        T* y = out.data() + static_cast<std::int64_t>(c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) y[i] = g * xs[i] + be;
    }
    return out;
}

/// Elementwise multiply by a constant (non-differentiated) mask.
template <typename T>
TensorT<T> mask_mul(const TensorT<T>& x, const std::vector<T>& mask) {
    if (static_cast<std::int64_t>(mask.size()) != x.numel())
        throw std::invalid_argument("mask_mul: mask size mismatch");
    auto m = std::make_shared<std::vector<T>>(mask);
    auto out = make_op<T>(x.shape(), {x}, [xn = x.node(), m](TensorNode<T>& o) {
        if (xn->requires_grad)
            for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * (*m)[i];
    });
    for (std::int64_t i = 0; i < x.numel(); ++i)
        out.data()[i] = x.data()[i] * mask[static_cast<size_t>(i)];
    return out;
}

/// Trilinear interpolation into grid[Gx,Gy,Gz,C] at points given in
/// cell-center lattice coordinates (clamped to the boundary lattice).
/// Differentiable w.r.t. grid values only; query points are data.
template <typename T>
TensorT<T> trilinear_gather(const TensorT<T>& grid, const std::vector<std::array<T, 3>>& pts) {
    if (grid.ndim() != 4) throw std::invalid_argument("trilinear_gather: grid must be 4-D");
    const int Gx = grid.dim(0), Gy = grid.dim(1), Gz = grid.dim(2), C = grid.dim(3);
    const int M = static_cast<int>(pts.size());
    for (auto& p : pts)
        for (T v : p)
            if (!std::isfinite(v))
                throw std::invalid_argument("trilinear_gather: non-finite query point");

    // Per-point corner indices and weights, shared with the backward pass.
    struct Corner {
        std::int64_t base[8];
        T w[8];
    };
    auto corners = std::make_shared<std::vector<Corner>>(static_cast<size_t>(M));
    auto clampi = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
    for (int i = 0; i < M; ++i) {
        T cx = std::min(std::max(pts[static_cast<size_t>(i)][0], T(0)), T(Gx - 1));
        T cy = std::min(std::max(pts[static_cast<size_t>(i)][1], T(0)), T(Gy - 1));
        T cz = std::min(std::max(pts[static_cast<size_t>(i)][2], T(0)), T(Gz - 1));
        int x0 = clampi(static_cast<int>(std::floor(cx)), Gx - 1);
        int y0 = clampi(static_cast<int>(std::floor(cy)), Gy - 1);
        int z0 = clampi(static_cast<int>(std::floor(cz)), Gz - 1);
        int x1 = std::min(x0 + 1, Gx - 1), y1 = std::min(y0 + 1, Gy - 1), z1 = std::min(z0 + 1, Gz - 1);
        T fx = cx - static_cast<T>(x0), fy = cy - static_cast<T>(y0), fz = cz - static_cast<T>(z0);
        Corner& cr = (*corners)[static_cast<size_t>(i)];
        int xs[2] = {x0, x1}, ys[2] = {y0, y1}, zs[2] = {z0, z1};
        T wx[2] = {T(1) - fx, fx}, wy[2] = {T(1) - fy, fy}, wz[2] = {T(1) - fz, fz};
        int j = 0;
        for (int a = 0; a < 2; ++a)
            for (int bnd = 0; bnd < 2; ++bnd)
                for (int c = 0; c < 2; ++c, ++j) {
                    cr.base[j] = ((static_cast<std::int64_t>(xs[a]) * Gy + ys[bnd]) * Gz + zs[c]) * C;
                    cr.w[j] = wx[a] * wy[bnd] * wz[c];
                }
    }

    auto out = make_op<T>({M, C}, {grid}, [gn = grid.node(), corners, M, C](TensorNode<T>& o) {
        if (!gn->requires_grad) return;
        for (int i = 0; i < M; ++i) {
            const Corner& cr = (*corners)[static_cast<size_t>(i)];
            const T* dy = o.grad.data() + static_cast<std::int64_t>(i) * C;
            for (int j = 0; j < 8; ++j) {
                T* dst = gn->grad.data() + cr.base[j];
                const T w = cr.w[j];
                for (int c = 0; c < C; ++c) dst[c] += w * dy[c];
            }
        }
    });
    for (int i = 0; i < M; ++i) {
        const Corner& cr = (*corners)[static_cast<size_t>(i)];
        T* y = out.data() + static_cast<std::int64_t>(i) * C;
        std::fill(y, y + C, T(0));
        for (int j = 0; j < 8; ++j) {
            const T* src = grid.data() + cr.base[j];
            const T w = cr.w[j];
            for (int c = 0; c < C; ++c) y[c] += w * src[c];
        }
    }
    return out;
}

/// Row-gather: out[i,:] = x[rows[i],:] for x[M,C].
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int>& rows) {
    const int C = x.dim(1);
    const int M = static_cast<int>(rows.size());
    auto r = std::make_shared<std::vector<int>>(rows);
    auto out = make_op<T>({M, C}, {x}, [xn = x.node(), r, C](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        for (size_t i = 0; i < r->size(); ++i) {
            const T* dy = o.grad.data() + static_cast<std::int64_t>(i) * C;
            T* dst = xn->grad.data() + static_cast<std::int64_t>((*r)[i]) * C;
            for (int c = 0; c < C; ++c) dst[c] += dy[c];
        }
    });
    for (int i = 0; i < M; ++i)
        std::copy(x.data() + static_cast<std::int64_t>(rows[static_cast<size_t>(i)]) * C,
                  x.data() + static_cast<std::int64_t>(rows[static_cast<size_t>(i)] + 1) * C,
                  out.data() + static_cast<std::int64_t>(i) * C);
    return out;
}

/// Per-group max pooling over rows of x[M,C]: out[g,c] = max over rows in
/// group g. Groups given as row-index lists; gradient routes to the argmax.
template <typename T>
TensorT<T> group_max_rows(const TensorT<T>& x, const std::vector<std::vector<int>>& groups) {
    const int C = x.dim(1);
    const int G = static_cast<int>(groups.size());
    auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(G) * C);
    auto out = make_op<T>({G, C}, {x}, [xn = x.node(), arg, G, C](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(G) * C; ++i)
            xn->grad[static_cast<size_t>((*arg)[static_cast<size_t>(i)] * C + i % C)] += o.grad[static_cast<size_t>(i)];
    });
    for (int g = 0; g < G; ++g) {
        if (groups[static_cast<size_t>(g)].empty())
            throw std::invalid_argument("group_max_rows: empty group " + std::to_string(g));
        for (int c = 0; c < C; ++c) {
            T best = -std::numeric_limits<T>::infinity();
            int bi = groups[static_cast<size_t>(g)][0];
            for (int row : groups[static_cast<size_t>(g)]) {
                T v = x.data()[static_cast<std::int64_t>(row) * C + c];
                if (v > best) {
                    best = v;
                    bi = row;
                }
            }
            out.data()[static_cast<std::int64_t>(g) * C + c] = best;
            (*arg)[static_cast<size_t>(g * C + c)] = bi;
        }
    }
    return out;
}

/// Per-group mean pooling over rows of x[M,C].
template <typename T>
TensorT<T> group_mean_rows(const TensorT<T>& x, const std::vector<std::vector<int>>& groups) {
    const int C = x.dim(1);
    const int G = static_cast<int>(groups.size());
    auto gr = std::make_shared<std::vector<std::vector<int>>>(groups);
    auto out = make_op<T>({G, C}, {x}, [xn = x.node(), gr, C](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        for (size_t g = 0; g < gr->size(); ++g) {
            const T inv = T(1) / static_cast<T>((*gr)[g].size());
            const T* dy = o.grad.data() + static_cast<std::int64_t>(g) * C;
            for (int row : (*gr)[g]) {
                T* dst = xn->grad.data() + static_cast<std::int64_t>(row) * C;
                for (int c = 0; c < C; ++c) dst[c] += dy[c] * inv;
            }
        }
    });
    for (int g = 0; g < G; ++g) {
        if (groups[static_cast<size_t>(g)].empty())
            throw std::invalid_argument("group_mean_rows: empty group " + std::to_string(g));
        T* y = out.data() + static_cast<std::int64_t>(g) * C;
        std::fill(y, y + C, T(0));
        for (int row : groups[static_cast<size_t>(g)])
            for (int c = 0; c < C; ++c) y[c] += x.data()[static_cast<std::int64_t>(row) * C + c];
        const T inv = T(1) / static_cast<T>(groups[static_cast<size_t>(g)].size());
        for (int c = 0; c < C; ++c) y[c] *= inv;
    }
    return out;
}

}  // namespace dnact
