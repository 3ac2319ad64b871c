// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace tempofuse {

// Dense real tensor (rank 1 or 2 in practice) holding 64-bit values and an
// optional gradient buffer that is populated by a backward pass.
struct TensorData {
    std::vector<int> shape;
    std::vector<double> v;
    std::vector<double> g;
    bool requires_grad = false;
};

class Tensor;

struct Node {
    std::vector<Tensor> parents;
    std::function<void(const Tensor& out)> backward;
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph construction inside a scope (evaluation, finite differences).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->v.assign(numel_of(d->shape), 0.0);
        d->requires_grad = requires_grad;
        Tensor t;
        t.d_ = std::move(d);
        return t;
    }

    static Tensor from_values(std::vector<int> shape, std::vector<double> values, bool requires_grad = false) {
        if (numel_of(shape) != values.size())
            throw std::invalid_argument("tensor: value count does not match shape");
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->v = std::move(values);
        d->requires_grad = requires_grad;
        Tensor t;
        t.d_ = std::move(d);
        return t;
    }

    // Scalars are 1x1 matrices so they compose with the rank-2 ops.
    static Tensor scalar(double value, bool requires_grad = false) {
        return from_values({1, 1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->v.size(); }
    int rows() const { return d_->shape.at(0); }
    int cols() const { return d_->shape.size() > 1 ? d_->shape[1] : 1; }
    bool is_scalar() const { return d_->v.size() == 1; }
    double item() const {
        if (!is_scalar()) throw std::logic_error("tensor: item() on non-scalar");
        return d_->v[0];
    }

    std::vector<double>& values() { return d_->v; }
    const std::vector<double>& values() const { return d_->v; }
    double& at(std::size_t i) { return d_->v[i]; }
    double at(std::size_t i) const { return d_->v[i]; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    std::vector<double>& grad() {
        ensure_grad();
        return d_->g;
    }
    const std::vector<double>& grad() const { return d_->g; }
    bool has_grad() const { return !d_->g.empty(); }
    void ensure_grad() {
        if (d_->g.size() != d_->v.size()) d_->g.assign(d_->v.size(), 0.0);
    }
    void zero_grad() {
        if (!d_->g.empty()) d_->g.assign(d_->v.size(), 0.0);
    }

    // Value copy disconnected from the graph; gradients never flow through.
    Tensor detach() const {
        Tensor t = Tensor::from_values(d_->shape, d_->v, false);
        return t;
    }

    TensorData* data_ptr() const { return d_.get(); }
    const std::shared_ptr<Node>& node() const { return node_; }
    void set_node(std::shared_ptr<Node> n) { node_ = std::move(n); }

    // Runs reverse-mode accumulation from this scalar; gradients land in the
    // grad buffers of every requires_grad tensor on the path.
    void backward() const {
        if (!is_scalar()) throw std::logic_error("backward: loss must be scalar");
        std::vector<Tensor> order;
        std::unordered_set<const Node*> seen;
        topo(*this, seen, order);
        const_cast<Tensor*>(this)->ensure_grad();
        d_->g[0] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const Tensor& t = *it;
            if (t.node_ && t.node_->backward) t.node_->backward(t);
        }
    }

private:
    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int s : shape) {
            if (s <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
            n *= static_cast<std::size_t>(s);
        }
        return n;
    }

    // Iterative DFS so arbitrarily long op chains cannot overflow the stack.
    static void topo(const Tensor& root, std::unordered_set<const Node*>& seen, std::vector<Tensor>& order) {
        if (!root.node_) return;
        struct Frame {
            Tensor t;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        seen.insert(root.node_.get());
        stack.push_back({root, 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            const auto& parents = f.t.node_->parents;
            bool descended = false;
            while (f.next_parent < parents.size()) {
                const Tensor& p = parents[f.next_parent++];
                if (p.node_ && !seen.count(p.node_.get())) {
                    seen.insert(p.node_.get());
                    stack.push_back({p, 0});
                    descended = true;
                    break;
                }
            }
            if (!descended && stack.back().next_parent >= stack.back().t.node_->parents.size()) {
                order.push_back(stack.back().t);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorData> d_;
    std::shared_ptr<Node> node_;
};

// True when an op whose inputs include `t` should be recorded on the tape.
inline bool track(const Tensor& t) {
    return grad_enabled() && (t.requires_grad() || t.node() != nullptr);
}

} // namespace tempofuse
