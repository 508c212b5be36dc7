#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "specfit/error.hpp"
#include "specfit/kernels.hpp"

namespace specfit {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

// Thread-local autograd switch. Ops record the backward graph only while
// enabled and at least one input requires grad.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// One node of the compute graph: a dense row-major buffer, an optional
// gradient buffer of the same shape, and the recipe for pushing gradients to
// its parents. Parent links are the only ownership edges, so dropping the
// last Tensor handle of a subgraph frees it.
template <class Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad; // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }

    void accumulate(const Real* g, std::size_t n) {
        if (!requires_grad) return;
        ensure_grad();
        kern::active_kernels<Real>().axpy(Real(1), g, grad.data(), n);
    }
};

template <class Real>
class Tensor {
public:
    Tensor() : n_(std::make_shared<TensorNode<Real>>()) {}

    explicit Tensor(std::shared_ptr<TensorNode<Real>> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<TensorNode<Real>>();
        n->data.assign(static_cast<std::size_t>(shape_numel(shape)), Real(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, Real v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.n_->data) x = v;
        return t;
    }

    static Tensor from(Shape shape, std::vector<Real> data) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw DimensionError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " elements");
        auto n = std::make_shared<TensorNode<Real>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(Real v) { return from({1}, {v}); }

    const Shape& shape() const { return n_->shape; }
    std::int64_t numel() const { return n_->numel(); }
    std::int64_t ndim() const { return static_cast<std::int64_t>(n_->shape.size()); }
    std::int64_t rows() const { return n_->shape.size() > 0 ? n_->shape[0] : 1; }
    std::int64_t cols() const { return n_->shape.size() > 1 ? n_->shape[1] : 1; }

    std::span<Real> data() { return {n_->data.data(), n_->data.size()}; }
    std::span<const Real> data() const { return {n_->data.data(), n_->data.size()}; }

    Real& at(std::int64_t i, std::int64_t j) { return n_->data[static_cast<std::size_t>(i * cols() + j)]; }
    Real at(std::int64_t i, std::int64_t j) const { return n_->data[static_cast<std::size_t>(i * cols() + j)]; }

    Real item() const {
        if (numel() != 1) throw ContractError("Tensor::item requires a scalar, got " + shape_str(shape()));
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }

    Tensor& set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }

    std::span<const Real> grad() const {
        if (n_->grad.empty())
            throw ContractError("Tensor::grad: no gradient present; run backward() first");
        return {n_->grad.data(), n_->grad.size()};
    }

    void zero_grad() {
        for (auto& g : n_->grad) g = Real(0);
    }

    // Deep copy with no graph attachment.
    Tensor clone_detached() const {
        Tensor t = from(n_->shape, n_->data);
        return t;
    }

    // Reverse-mode sweep from a scalar. Visits each reachable node exactly
    // once in reverse topological order; the recorded graph is released
    // afterwards unless retain_graph is set.
    void backward(bool retain_graph = false) {
        if (numel() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(shape()));
        if (!n_->requires_grad)
            throw ContractError("backward: loss is not connected to a differentiable graph");
        std::vector<TensorNode<Real>*> order;
        topo_collect(order);
        n_->ensure_grad();
        n_->grad[0] = Real(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode<Real>* node = *it;
            if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
        }
        if (!retain_graph) {
            for (TensorNode<Real>* node : order) {
                node->backward_fn = nullptr;
                node->parents.clear();
            }
        }
    }

    // Shapes of every node reachable from this tensor; used by structural
    // tests (e.g. asserting a factored forward never built a dense weight).
    std::vector<Shape> graph_shapes() const {
        std::vector<TensorNode<Real>*> order;
        topo_collect(order);
        std::vector<Shape> out;
        out.reserve(order.size());
        for (auto* n : order) out.push_back(n->shape);
        return out;
    }

    std::shared_ptr<TensorNode<Real>>& node() { return n_; }
    const std::shared_ptr<TensorNode<Real>>& node() const { return n_; }

private:
    void topo_collect(std::vector<TensorNode<Real>*>& order) const {
        // Iterative post-order DFS; graphs can be deep for long sequences.
        std::unordered_set<TensorNode<Real>*> visited;
        std::vector<std::pair<TensorNode<Real>*, std::size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        visited.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorNode<Real>* p = node->parents[idx++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<Real>> n_;
};

// Builds an op result node. The backward recipe and parent links are only
// recorded when gradients can actually flow.
template <class Real>
Tensor<Real> make_op(Shape shape, std::vector<Real>&& data,
                     std::vector<Tensor<Real>> parents,
                     std::function<void(TensorNode<Real>&)> backward_fn) {
    Tensor<Real> out = Tensor<Real>::from(std::move(shape), std::move(data));
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p.requires_grad()) { needs = true; break; }
    if (needs) {
        out.node()->requires_grad = true;
        out.node()->parents.reserve(parents.size());
        for (auto& p : parents) out.node()->parents.push_back(p.node());
        out.node()->backward_fn = std::move(backward_fn);
    }
    return out;
}

} // namespace specfit
