#include "diffood/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace diffood {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

ShapeError::ShapeError(std::string op, Shape lhs, Shape rhs, const std::string& detail)
    : std::invalid_argument(op + ": shape mismatch " + shape_str(lhs) + " vs " + shape_str(rhs) +
                            (detail.empty() ? std::string{} : " (" + detail + ")")),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
    for (auto s : shape) {
        if (s == 0) throw ShapeError("tensor", shape, {}, "extents must be positive");
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor", shape, Shape{data.size()}, "data length must equal product of shape");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) throw ShapeError("dim", node_->shape, Shape{axis}, "axis out of range");
    return node_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (node_->data.size() != 1) throw ShapeError("item", node_->shape, Shape{1}, "not a scalar");
    return node_->data[0];
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
    if (!node_->is_leaf) throw std::logic_error("set_requires_grad on a non-leaf tensor");
    node_->requires_grad = flag;
    if (flag) {
        node_->grad.assign(node_->data.size(), T(0));
    } else {
        node_->grad.clear();
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
void BasicTensor<T>::backward() const {
    if (node_->data.size() != 1) throw ShapeError("backward", node_->shape, Shape{1}, "loss must be scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<NodeType*> order;
    std::unordered_set<NodeType*> visited;
    std::vector<std::pair<NodeType*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeType* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (NodeType* n : order) {
        if (!n->is_leaf) n->grad.assign(n->data.size(), T(0));
    }
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeType* n = *it;
        if (n->backward) n->backward(*n);
    }
}

namespace detail {

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::vector<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward) {
    for (const T& v : data) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    node->is_leaf = false;
    const bool track = grad_enabled() &&
                       std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return BasicTensor<T>::wrap(std::move(node));
}

template BasicTensor<float> make_result(const char*, Shape, std::vector<float>,
                                        std::vector<std::shared_ptr<Node<float>>>,
                                        std::function<void(Node<float>&)>);
template BasicTensor<double> make_result(const char*, Shape, std::vector<double>,
                                         std::vector<std::shared_ptr<Node<double>>>,
                                         std::function<void(Node<double>&)>);

}  // namespace detail

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace diffood
