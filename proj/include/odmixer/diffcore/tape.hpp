#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "odmixer/diffcore/tensor.hpp"

namespace odmixer::diffcore {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

/// Records differentiable operations in execution order and replays them
/// backwards. Nodes are appended only after their inputs exist, so the node
/// vector is already topologically sorted.
///
/// Gradients are accumulated with a fixed order: nodes are visited from last
/// to first, and within every op the reductions run over ascending flat
/// indices. Results are therefore bit-stable for a given input.
template <typename T>
class Tape {
public:
    using Backprop = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value)
    {
        return push(std::move(value), false, {});
    }

    /// Binds a parameter as a leaf. Its gradient is added to `p.grad` on backward.
    Var<T> leaf(Parameter<T>& p)
    {
        Var<T> v = push(p.value, p.requires_grad, {});
        nodes_[v.id].param = &p;
        return v;
    }

    /// Leaf that requires a gradient but is not tied to a parameter; read it via grad().
    Var<T> input(Tensor<T> value)
    {
        return push(std::move(value), true, {});
    }

    Var<T> push(Tensor<T> value, bool requires_grad, Backprop backprop)
    {
        if (consumed_) throw StateError("tape already consumed by backward()");
        nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backprop), nullptr});
        return Var<T>{this, nodes_.size() - 1};
    }

    const Tensor<T>& value(Var<T> v) const
    {
        check(v);
        return nodes_[v.id].value;
    }
    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }

    bool requires_grad(Var<T> v) const
    {
        check(v);
        return nodes_[v.id].requires_grad;
    }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of node `id`, allocated on first use.
    std::vector<T>& grad_buffer(std::size_t id)
    {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), T{});
        return n.grad;
    }

    /// Gradient of a node after backward(); zeros when nothing flowed into it.
    Tensor<T> grad(Var<T> v) const
    {
        check(v);
        const auto& n = nodes_[v.id];
        if (n.grad.empty()) return Tensor<T>(n.value.shape());
        return Tensor<T>(n.value.shape(), n.grad);
    }

    void backward(Var<T> loss)
    {
        check(loss);
        if (consumed_) throw StateError("backward() called twice on the same tape");
        if (nodes_.empty()) throw StateError("backward() on an empty tape");
        if (!nodes_[loss.id].value.shape().empty())
            throw DimensionError("backward() needs a scalar loss, got shape " +
                                 shape_str(nodes_[loss.id].value.shape()));
        consumed_ = true;
        if (!nodes_[loss.id].requires_grad) return;
        grad_buffer(loss.id)[0] = T{1};
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            auto& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backprop) n.backprop(*this, id);
            if (n.param) {
                auto& g = n.param->grad.storage();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
        }
    }

    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        bool requires_grad;
        Backprop backprop;
        Parameter<T>* param;
    };

    void check(Var<T> v) const
    {
        if (v.tape != this || v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
    }

    std::deque<Node> nodes_;  // stable references across push
    bool consumed_ = false;
};

} // namespace odmixer::diffcore
