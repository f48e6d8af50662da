#include "emgtf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "emgtf/error.hpp"

namespace emgtf {

namespace {
thread_local bool g_no_grad = false;
} // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
std::vector<T>& Node<T>::grad_storage() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
}

template struct Node<float>;
template struct Node<double>;

} // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() noexcept { return g_no_grad; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_str(s));
    return s[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_->is_leaf()) throw ContractError("cannot write into a non-leaf tensor");
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw IndexError("index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return node_->grad_storage();
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
    if (!node_ || node_->data.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (node_ ? shape_str(node_->shape) : std::string("<undefined>")));
    }
    if (!node_->requires_grad) throw ContractError("loss does not depend on any tensor requiring grad");

    // Iterative post-order DFS gives a topological order (inputs first).
    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            NodeT* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (NodeT* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), T{0});
    }
    node_->grad_storage()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                             std::function<void(detail::Node<T>&)> backward_fn, const char* op) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    const bool track = !g_no_grad &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.node_);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

template <typename T>
bool all_finite(std::span<const T> values) {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

} // namespace emgtf
