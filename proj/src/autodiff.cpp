#include "sepg/autodiff.hpp"

#include <unordered_set>

#include "sepg/error.hpp"

namespace sepg {

void Var::Node::ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
}

void Var::Node::accumulate(const Tensor& g) {
    if (!g.same_shape(value)) {
        throw DimensionError("gradient shape " + shape_str(g.shape()) +
                             " does not match value shape " + shape_str(value.shape()));
    }
    ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

Var Var::constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    n->op = "constant";
    return wrap(std::move(n));
}

Var Var::param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->op = "param";
    return wrap(std::move(n));
}

const Tensor& Var::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Var::set_value(Tensor v) {
    if (!node_) throw Error("set_value on undefined Var");
    if (!node_->parents.empty()) throw Error("set_value is only valid on leaf nodes");
    if (!v.same_shape(node_->value)) {
        throw DimensionError("set_value shape " + shape_str(v.shape()) +
                             " does not match existing shape " + shape_str(node_->value.shape()));
    }
    node_->value = std::move(v);
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor::zeros(node_->value.shape());
}

Var make_op(const char* name, Tensor value, std::vector<Var> parents,
            std::function<void(Var::Node&)> backward_fn) {
    auto n = std::make_shared<Var::Node>();
    n->value = std::move(value);
    n->op = name;
    bool needs = false;
    for (const Var& p : parents) {
        if (p.defined() && p.requires_grad()) {
            needs = true;
            break;
        }
    }
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backward = std::move(backward_fn);
    }
    return Var::wrap(std::move(n));
}

void backward(const Var& root) {
    if (!root.defined()) throw Error("backward on undefined Var");
    if (root.value().numel() != 1) {
        throw DimensionError("backward root must be scalar, got shape " +
                             shape_str(root.value().shape()));
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS; recursion would overflow on long op chains.
    std::vector<Var::Node*> order;
    std::unordered_set<Var::Node*> visited;
    std::vector<std::pair<Var::Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Var::Node* child = node->parents[next_child].node().get();
            ++next_child;
            if (child && child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Var::Node* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
}

} // namespace sepg
