#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sepg/tensor.hpp"

namespace sepg {

// Differentiable tensor handle. Each operation records a node holding the
// forward value and a backward closure; calling backward() on a scalar root
// replays the recorded sequence in reverse topological order, accumulating
// gradients into every node that requires them. Values are immutable after
// construction; set_value is reserved for optimizer updates on leaves
// between evaluations.
class Var {
public:
    struct Node {
        Tensor value;
        Tensor grad; // allocated lazily, same shape as value
        bool requires_grad = false;
        std::vector<Var> parents;
        std::function<void(Node&)> backward; // reads this->grad, feeds parents
        const char* op = "leaf";

        void ensure_grad();
        void accumulate(const Tensor& g);
    };

    Var() = default;

    static Var constant(Tensor v);
    static Var param(Tensor v); // leaf that accumulates gradient

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const char* op_name() const { return node_ ? node_->op : "undefined"; }

    void set_value(Tensor v);
    void zero_grad();

    std::shared_ptr<Node> node() const { return node_; }
    bool same_node(const Var& o) const { return node_ == o.node_; }

    static Var wrap(std::shared_ptr<Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<Node> node_;
};

// Creates an op node. Gradient tracking is dropped when no parent needs it.
Var make_op(const char* name, Tensor value, std::vector<Var> parents,
            std::function<void(Var::Node&)> backward);

// Reverse-mode sweep from a scalar root.
void backward(const Var& root);

} // namespace sepg
