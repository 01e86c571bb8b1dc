// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense arrays. A Tensor is a value-semantic
// handle to a node in an eagerly built computation graph; backward() walks
// the graph in reverse topological order. Single-threaded by contract for
// one graph; independent graphs may be evaluated concurrently.

#pragma once

#include "bevsplat/core/common.hpp"

#include <functional>
#include <map>
#include <memory>
#include <unordered_set>

namespace bevsplat {

template <class S>
struct TensorNode {
    Shape shape;
    VecX<S> vals;
    VecX<S> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backward_fn;
    const char* op = "leaf";

    std::int64_t size() const { return vals.size(); }

    void accum_grad(const VecX<S>& g) {
        if (!requires_grad) return;
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
    VecX<S>& grad_buf() {
        if (grad.size() == 0) grad = VecX<S>::Zero(vals.size());
        return grad;
    }
};

template <class S>
class Tensor {
  public:
    using Node = TensorNode<S>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from(Shape shape, VecX<S> vals) {
        if (vals.size() != numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(vals.size()) +
                                        " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->vals = std::move(vals);
        return Tensor(n);
    }
    static Tensor from(Shape shape, const std::vector<S>& v) {
        VecX<S> a(static_cast<std::int64_t>(v.size()));
        for (std::int64_t i = 0; i < a.size(); ++i) a[i] = v[static_cast<size_t>(i)];
        return from(std::move(shape), std::move(a));
    }
    static Tensor zeros(Shape shape) {
        return from(std::move(shape), VecX<S>::Zero(numel(shape)));
    }
    static Tensor full(Shape shape, S v) {
        return from(std::move(shape), VecX<S>::Constant(numel(shape), v));
    }
    static Tensor scalar(S v) { return full({1}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return node_->vals.size(); }
    std::int64_t dim(int i) const {
        int r = static_cast<int>(node_->shape.size());
        return node_->shape[static_cast<size_t>(i < 0 ? r + i : i)];
    }
    int rank() const { return static_cast<int>(node_->shape.size()); }

    const VecX<S>& vals() const { return node_->vals; }
    VecX<S>& vals_mut() { return node_->vals; }
    const VecX<S>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.resize(0); }

    S item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar " + shape_str(shape()));
        return node_->vals[0];
    }
    S at(std::int64_t i) const { return node_->vals[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        node_->requires_grad = b;
        return *this;
    }

    // Value copy with no graph history.
    Tensor detach() const { return from(shape(), vals()); }

    std::shared_ptr<Node> node() const { return node_; }
    Node* raw() const { return node_.get(); }

  private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// op-count instrumentation for performance work; enabled by callers that set
// the pointer to a live map
inline std::map<std::string, std::int64_t>*& op_counter() {
    static std::map<std::string, std::int64_t>* p = nullptr;
    return p;
}

template <class S>
inline void check_finite(const TensorNode<S>& n) {
    if (!finite_checks()) return;
    if (!n.vals.isFinite().all())
        throw std::runtime_error(std::string("non-finite values produced by op '") + n.op + "'");
}

// Builds a graph node.  `bwd` receives the completed node (vals + grad set)
// and must accumulate into the parents' grads.
template <class S>
Tensor<S> make_op(const char* op, Shape shape, VecX<S> vals,
                  std::vector<std::shared_ptr<TensorNode<S>>> parents,
                  std::function<void(TensorNode<S>&)> bwd) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->vals = std::move(vals);
    n->op = op;
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    if (auto* ctr = op_counter()) ++(*ctr)[op];
    check_finite(*n);
    return Tensor<S>(n);
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate into the .grad
// buffers of every grad-requiring ancestor; caller zeroes them between steps.
template <class S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward() requires a scalar, got " + shape_str(loss.shape()));
    using Node = TensorNode<S>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative DFS; post-order gives a valid topological order.
    struct Frame {
        Node* n;
        size_t next;
    };
    std::vector<Frame> stack;
    if (!loss.raw()->requires_grad) return;
    stack.push_back({loss.raw(), 0});
    seen.insert(loss.raw());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    loss.raw()->grad = VecX<S>::Constant(1, S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

}  // namespace bevsplat
