#pragma once

// Tape-based reverse-mode autodiff over Tensor<T>. Every op appends one
// node, so walking the tape backwards is a valid topological order.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "goelan/tensor.hpp"

namespace goelan {

// A trainable (or buffer) tensor owned by a module. Gradients accumulate
// into `grad` across backward() calls until zero_grad().
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;  // buffers (BN running stats) are not trainable
    bool decay = true;      // weight decay applies (off for BN affine and biases)

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros_like(value);
    }
    void zero_grad() {
        if (!grad.empty()) grad.fill(T(0));
    }
    std::int64_t count() const { return value.size(); }
};

template <class T>
class Tape;

template <class T>
struct Value {
    Tape<T>* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Tensor<T>& val() const;
    Tensor<T>& grad() const;
};

template <class T>
class Tape {
public:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;  // lazily allocated on first accumulation
        bool needs_grad = false;
        Parameter<T>* param = nullptr;          // set for parameter leaves
        std::function<void(Node&)> back;        // null for leaves and constants

        Tensor<T>& ensure_grad() {
            if (grad.empty()) grad = Tensor<T>::zeros_like(val);
            return grad;
        }
    };

    Value<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr, {}); }

    Value<T> input(Tensor<T> v, bool needs_grad = true) {
        return push(std::move(v), needs_grad, nullptr, {});
    }

    // Leaf sharing the parameter's storage; backward() flushes into p.grad.
    Value<T> leaf(Parameter<T>& p) { return push(p.value, p.trainable, &p, {}); }

    Value<T> make(Tensor<T> v, bool needs_grad, std::function<void(Node&)> back) {
        return push(std::move(v), needs_grad, nullptr, std::move(back));
    }

    Node& node(int i) { return *nodes_[i]; }
    const Node& node(int i) const { return *nodes_[i]; }
    Node* node_ptr(int i) { return nodes_[i].get(); }
    int size() const { return int(nodes_.size()); }

    // Seeds d(root)/d(root) = 1 and propagates to all leaves, then flushes
    // parameter-leaf gradients into their Parameter::grad. Call once per tape.
    void backward(Value<T> root) {
        Node& r = node(root.idx);
        r.ensure_grad();
        r.grad.fill(T(1));  // non-scalar roots get sum-reduction semantics
        for (int i = root.idx; i >= 0; --i) {
            Node& nd = *nodes_[i];
            if (!nd.needs_grad || nd.grad.empty()) continue;
            if (nd.back) nd.back(nd);
        }
        for (auto& up : nodes_) {
            Node& nd = *up;
            if (nd.param && nd.param->trainable && !nd.grad.empty()) {
                nd.param->ensure_grad();
                nd.param->grad.add_(nd.grad);
            }
        }
    }

    void clear() { nodes_.clear(); }

private:
    Value<T> push(Tensor<T> v, bool needs_grad, Parameter<T>* p,
                  std::function<void(typename Tape<T>::Node&)> back) {
        auto nd = std::make_unique<Node>();
        nd->val = std::move(v);
        nd->needs_grad = needs_grad;
        nd->param = p;
        nd->back = std::move(back);
        nodes_.push_back(std::move(nd));
        return Value<T>{this, int(nodes_.size()) - 1};
    }

    std::vector<std::unique_ptr<Node>> nodes_;
};

template <class T>
const Tensor<T>& Value<T>::val() const {
    return tape->node(idx).val;
}

template <class T>
Tensor<T>& Value<T>::grad() const {
    return tape->node(idx).grad;
}

// Accumulate `g` into a parent node's gradient if it participates.
template <class T>
inline void accumulate(typename Tape<T>::Node* parent, const Tensor<T>& g) {
    if (!parent->needs_grad) return;
    parent->ensure_grad();
    parent->grad.add_(g);
}

}  // namespace goelan
