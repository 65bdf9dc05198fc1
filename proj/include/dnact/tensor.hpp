#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dnact {

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
    os << ")";
    return os.str();
}

/// Node of the dynamic tape. The tape is rebuilt on every forward pass;
/// backward walks nodes in reverse creation order.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same size as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // adds into parents' grads
    std::uint64_t id = 0;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

inline std::uint64_t next_node_id() {
    static thread_local std::uint64_t counter = 0;
    return ++counter;
}

/// Dense N-d tensor handle participating in reverse-mode autodiff.
/// Production code uses T = float; tests instantiate T = double for
/// finite-difference oracles.
template <typename T>
class TensorT {
public:
    using Node = TensorNode<T>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(Shape shape, T value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data.assign(static_cast<size_t>(numel_of(n->shape)), value);
        n->requires_grad = requires_grad;
        n->id = next_node_id();
        return TensorT(std::move(n));
    }

    static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        n->id = next_node_id();
        return TensorT(std::move(n));
    }

    static TensorT scalar(T value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    template <typename Rng>
    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, 1.0);
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = static_cast<T>(dist(rng)) * stddev;
        return t;
    }

    template <typename Rng>
    static TensorT uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = static_cast<T>(dist(rng));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    T* data() { return node_->data.data(); }
    const T* data() const { return node_->data.data(); }
    std::vector<T>& vec() { return node_->data; }
    const std::vector<T>& vec() const { return node_->data; }
    T item() const {
        if (numel() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        if (rg) node_->ensure_grad();
    }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const { return node_->grad; }

    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    std::shared_ptr<Node> node() const { return node_; }

    /// Reverse-mode sweep from a scalar loss. Nodes run exactly once, in
    /// reverse creation order; repeated calls without zero_grad accumulate.
    void backward() const {
        if (numel() != 1)
            throw std::logic_error("backward() requires a scalar loss, got " + shape_str(shape()));
        std::vector<std::shared_ptr<Node>> order;
        std::unordered_set<Node*> seen;
        std::vector<std::shared_ptr<Node>> stack{node_};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            order.push_back(n);
            for (auto& p : n->parents)
                if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
        }
        std::sort(order.begin(), order.end(),
                  [](const auto& a, const auto& b) { return a->id > b->id; });
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto& n : order)
            if (n->backward_fn) n->backward_fn(*n);
    }

private:
    std::shared_ptr<Node> node_;
};

/// Builds a result node wired to its parents; the node requires grad iff any
/// parent does, and grad buffers exist only along differentiable paths.
template <typename T>
TensorT<T> make_op(Shape shape, std::vector<TensorT<T>> parents,
                   std::function<void(TensorNode<T>&)> backward_fn) {
    auto out = TensorT<T>::zeros(std::move(shape));
    auto n = out.node();
    bool rg = false;
    for (auto& p : parents) {
        rg = rg || p.requires_grad();
        n->parents.push_back(p.node());
    }
    n->requires_grad = rg;
    if (rg) {
        n->ensure_grad();
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backward_fn = std::move(backward_fn);
    }
    return out;
}

using Tensor = TensorT<float>;

}  // namespace dnact
