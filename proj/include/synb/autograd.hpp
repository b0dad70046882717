#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "synb/tensor.hpp"

namespace synb {

// Reverse-mode tape. Each op returns a fresh node holding its value and,
// when any input is tracked, a closure that routes the node gradient into
// the parents. Backward visits nodes once in reverse topological order.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;

    void ensure_grad() {
        if (grad.v.empty()) grad = Tensor<T>(value.shape);
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

    static Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var<T>(std::move(n));
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor<T>& val() const { return n_->value; }
    Tensor<T>& val() { return n_->value; }
    const Shape& shape() const { return n_->value.shape; }
    bool requires_grad() const { return n_ && n_->requires_grad; }

    Tensor<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }

    void zero_grad() {
        if (n_) n_->grad = Tensor<T>();
    }

    Var<T> detach() const { return leaf(n_->value, false); }

    std::shared_ptr<Node<T>> node() const { return n_; }

private:
    std::shared_ptr<Node<T>> n_;
};

template <typename T>
std::shared_ptr<Node<T>> make_node(Tensor<T> value, std::vector<Var<T>> inputs,
                                   std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool track = false;
    for (const auto& in : inputs) track = track || in.requires_grad();
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return n;
}

// Scalar root only. Iterative DFS keeps deep graphs off the call stack.
template <typename T>
void backward(const Var<T>& root) {
    check(numel(root.shape()) == 1, "backward requires a scalar root");
    auto r = root.node();
    if (!r->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(r.get(), 0);
    seen.insert(r.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is topological (parents first); traverse in reverse
    r->ensure_grad();
    r->grad.v[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (!node->backprop) continue;
        node->ensure_grad();
        for (auto& p : node->parents)
            if (p->requires_grad) p->ensure_grad();
        node->backprop(*node);
    }
}

}  // namespace synb
