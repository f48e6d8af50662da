#pragma once

// Dense row-major tensors that record the operations producing them, so that
// a scalar result can be differentiated with respect to every leaf that
// requires a gradient (define-by-run reverse mode).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace emgtf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    bool is_leaf() const noexcept { return !backward_fn; }
    std::vector<T>& grad_storage();
};

} // namespace detail

/// Shared handle to a node of the computation graph. Copies alias the same
/// storage; use clone() for an independent value.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Direct write access. Only valid on leaves (parameters, inputs).
    std::span<T> mutable_data();
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    /// Gradient storage; zero-filled view when nothing has been accumulated.
    std::span<const T> grad() const;
    void zero_grad();

    /// Reverse pass from a one-element tensor. Intermediate gradients are
    /// reset first; leaf gradients accumulate.
    void backward() const;

    /// Same values, no history, independent storage.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const char* op_name() const { return node_->op; }

    // Used by op implementations.
    static Tensor from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                          std::function<void(detail::Node<T>&)> backward_fn, const char* op);
    detail::Node<T>& node() const { return *node_; }
    const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node<T>> node_;
};

/// While alive, ops on this thread record no history. Used for evaluation and
/// finite-difference probes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active() noexcept;

private:
    bool previous_;
};

template <typename T>
bool all_finite(std::span<const T> values);

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace emgtf
