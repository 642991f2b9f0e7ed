#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrnn/errors.hpp"
#include "rrnn/tensor.hpp"

namespace rrnn::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives
// and has not been reset.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const {
        if (!tape_) throw state_error("use of an unbound Var");
        return *tape_;
    }
    std::size_t id() const noexcept { return id_; }
    bool bound() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Everything a backward rule may look at. in_grads[i] is null when input i does not
// require a gradient; rules must accumulate (+=) into the non-null ones.
struct BackwardContext {
    const Tensor& out_value;
    const Tensor& out_grad;
    std::span<const Tensor* const> in_values;
    std::span<Tensor* const> in_grads;
};

using BackwardRule = std::function<void(const BackwardContext&)>;

// Linear record of forward operations. Node ids increase in creation order, so a
// reverse sweep over ids is a reverse topological order of the graph.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Non-differentiable input.
    Var constant(Tensor value) { return push(Node{std::move(value)}); }

    // Differentiable input owned by the tape; read its gradient with grad().
    Var leaf(Tensor value) {
        Node n{std::move(value)};
        n.requires_grad = true;
        return push(std::move(n));
    }

    // Differentiable input living outside the tape. Gradients are added into `grad_sink`,
    // which must have the same shape as `value` and outlive backward().
    Var parameter(const Tensor& value, Tensor& grad_sink) {
        if (grad_sink.shape() != value.shape()) {
            throw shape_error("gradient sink " + to_string(grad_sink.shape()) + " does not match parameter " +
                              to_string(value.shape()));
        }
        Node n;
        n.external = &value;
        n.sink = &grad_sink;
        n.requires_grad = true;
        return push(std::move(n));
    }

    // Registers the result of an operation. A backward rule is kept only if some input
    // requires a gradient.
    Var record(Tensor value, std::vector<Var> inputs, BackwardRule rule, const char* op) {
        if (!value.all_finite()) throw numeric_error(std::string("non-finite value produced by ") + op);
        Node n{std::move(value)};
        for (const auto& in : inputs) {
            if (&in.tape() != this) throw state_error("operands recorded on different tapes");
            n.inputs.push_back(in.id());
            n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
        }
        if (n.requires_grad) n.rule = std::move(rule);
        return push(std::move(n));
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    // Gradient of the last backward() w.r.t. a node (zeros if the loss does not reach it).
    Tensor grad(const Var& v) const {
        if (!done_) throw state_error("grad() requested before backward()");
        const Node& n = nodes_.at(v.id());
        if (n.sink) return *n.sink;
        if (!n.grad) return Tensor(value(v.id()).shape(), 0.0);
        return *n.grad;
    }

    void backward(const Var& loss) {
        if (done_) throw state_error("backward() called twice on the same tape; reset() first");
        if (&loss.tape() != this) throw state_error("loss belongs to another tape");
        const Tensor& lv = value(loss.id());
        if (lv.size() != 1) throw shape_error("backward() needs a scalar loss, got " + to_string(lv.shape()));
        done_ = true;
        if (!nodes_[loss.id()].requires_grad) return;

        grad_slot(loss.id()).fill(1.0);
        std::vector<const Tensor*> in_values;
        std::vector<Tensor*> in_grads;
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.rule || !n.grad) continue;
            in_values.clear();
            in_grads.clear();
            for (auto in : n.inputs) {
                in_values.push_back(&value(in));
                in_grads.push_back(nodes_[in].requires_grad ? &grad_slot(in) : nullptr);
            }
            n.rule(BackwardContext{n.value, *n.grad, in_values, in_grads});
        }
    }

    // Drops every recorded node. Outstanding Vars become dangling.
    void reset() {
        nodes_.clear();
        done_ = false;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Node() = default;
        explicit Node(Tensor v) : value(std::move(v)) {}

        Tensor value;
        const Tensor* external = nullptr;
        Tensor* sink = nullptr;
        std::vector<std::size_t> inputs;
        BackwardRule rule;
        std::optional<Tensor> grad;
        bool requires_grad = false;
    };

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    Tensor& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.sink) return *n.sink;
        if (!n.grad) n.grad.emplace(value(id).shape(), 0.0);
        return *n.grad;
    }

    std::vector<Node> nodes_;
    bool done_ = false;
};

inline const Tensor& Var::value() const { return tape().value(id_); }
inline bool Var::requires_grad() const { return tape().requires_grad(id_); }

}  // namespace rrnn::ad
