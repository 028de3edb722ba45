#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace poiformer {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes violate an operation's contract.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or infinity reaches a computation that rejects it.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Backward record attached to every tensor produced by a tracked op.
struct GradNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads the output's data and grad, accumulates into the inputs' grads.
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<GradNode> node;
    std::uint64_t visit_mark = 0;  // traversal bookkeeping for backward()

    // Returns the gradient buffer of a tracked tensor, or nullptr when the
    // tensor does not participate in differentiation.
    double* grad_buffer() {
        if (!requires_grad) return nullptr;
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad.data();
    }
};

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// `Tensor` is a shared handle: copies alias the same storage, which is how
/// parameter structs and the parameter store refer to one set of weights.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return impl_->data.size(); }
    // 2-D accessors; throw DimensionError on other ranks.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    std::span<const double> grad() const { return impl_->grad; }
    bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const { return !impl_->node; }

    void zero_grad();
    /// Populates grad on every reachable leaf that requires grad. Leaves
    /// accumulate across calls; intermediate buffers are reset per call.
    void backward() const;

    /// Copy of the data with no graph attached.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

// Wraps freshly computed output data. A graph node is attached only when
// grad mode is on and at least one input requires grad.
Tensor make_output(Shape shape, std::vector<double> data, const char* op,
                   std::vector<std::shared_ptr<TensorImpl>> inputs,
                   std::function<void(const TensorImpl&)> backward);

}  // namespace detail

}  // namespace poiformer
