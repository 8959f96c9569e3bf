#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffood {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes do not conform. Carries the op name and both shapes.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(std::string op, Shape lhs, Shape rhs, const std::string& detail = {});

    const std::string& op() const noexcept { return op_; }
    const Shape& lhs() const noexcept { return lhs_; }
    const Shape& rhs() const noexcept { return rhs_; }

private:
    std::string op_;
    Shape lhs_;
    Shape rhs_;
};

/// Raised when a forward op produces NaN/Inf or a numeric precondition fails.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized iff requires_grad
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

}  // namespace detail

/// Gradient recording is on by default; a guard disables it for the current thread.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard() noexcept;
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major tensor handle participating in a reverse-mode graph.
///
/// Copies share storage (handle semantics). Results of ops on inputs that
/// require grad are recorded in the graph; `backward()` on a scalar fills
/// `grad()` of every reachable leaf. Leaf grads accumulate across calls until
/// `zero_grad()`; interior grads are recomputed from zero on every call.
template <typename T>
class BasicTensor {
public:
    using value_type = T;
    using NodeType = detail::Node<T>;

    BasicTensor() = default;
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> data_mut() { return node_->data; }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_mut() { return node_->grad; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool is_leaf() const noexcept { return node_ && node_->is_leaf; }
    const char* op_name() const { return node_->op; }

    T item() const;
    void zero_grad();
    void set_requires_grad(bool flag);

    /// Deep copy of the values, detached from any graph.
    BasicTensor detach() const;

    /// Reverse pass from this scalar; ShapeError if it is not a scalar.
    void backward() const;

    template <typename U>
    BasicTensor<U> cast(bool requires_grad) const;

    NodeType* node() const noexcept { return node_.get(); }
    const std::shared_ptr<NodeType>& shared() const noexcept { return node_; }
    static BasicTensor wrap(std::shared_ptr<NodeType> node) { return BasicTensor(std::move(node)); }

private:
    explicit BasicTensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}
    std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast(bool requires_grad) const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(node_->shape, std::move(out), requires_grad);
}

namespace detail {

/// Builds an op result. The graph edge is recorded only when grad mode is on
/// and at least one parent requires grad. Throws NumericError on non-finite output.
template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::vector<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward);

/// Returns the parent's grad buffer when it participates in the reverse pass.
template <typename T>
inline std::vector<T>* grad_of(Node<T>& parent) {
    return parent.requires_grad ? &parent.grad : nullptr;
}

}  // namespace detail

}  // namespace diffood
