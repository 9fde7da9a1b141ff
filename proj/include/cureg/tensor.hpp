#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cureg::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += "x";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

/// N-dimensional array taking part in reverse-mode differentiation.
/// Copies share the underlying node; graphs are built by the free functions in ops.hpp.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Tensor make(Shape shape, std::vector<T> values, bool requires_grad) {
        if (values.size() != ad::numel(shape))
            throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor parameter(Shape shape, std::vector<T> values) { return make(std::move(shape), std::move(values), true); }
    static Tensor constant(Shape shape, std::vector<T> values) { return make(std::move(shape), std::move(values), false); }
    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        const std::size_t n = ad::numel(shape);
        return make(std::move(shape), std::vector<T>(n, v), requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(0), requires_grad); }
    static Tensor scalar(T v) { return make({1}, {v}, false); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const T> values() const { return node_->value; }
    /// Direct value access for optimizers and finite differencing; does not touch the graph.
    std::span<T> mutable_values() { return node_->value; }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor has shape " + to_string(shape()));
        return node_->value[0];
    }
    T operator[](std::size_t i) const { return node_->value[i]; }

    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Creates the result of an operation. Parents and the backward rule are kept only when some
/// parent requires a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<Tensor<T>> parents, const char* op,
                      std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->op = op;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

namespace detail {

template <class T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace detail

/// Reverse pass from a one-element loss. Gradients accumulate into every reachable tensor that
/// requires them. Calling twice on the same loss without reset_graph() is an error.
template <class T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward: loss must have exactly one element, got shape " +
                         (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
    Node<T>* root = loss.node();
    if (root->backward_done) throw std::logic_error("backward: already called on this graph; call reset_graph first");
    if (!root->requires_grad) {
        root->backward_done = true;
        return;
    }
    const auto order = detail::topological_order(root);
    for (Node<T>* n : order) n->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    root->backward_done = true;
}

/// Zeroes every gradient reachable from `loss` (leaves included) and re-arms backward().
template <class T>
void reset_graph(const Tensor<T>& loss) {
    Node<T>* root = loss.node();
    root->backward_done = false;
    if (!root->requires_grad) return;
    for (Node<T>* n : detail::topological_order(root)) n->grad.assign(n->value.size(), T(0));
}

}  // namespace cureg::ad
