#include "poiformer/tensor.hpp"

#include <algorithm>
#include <utility>

namespace poiformer {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> values(numel_of(shape), value);
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel_of(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_str(shape()));
    return impl_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_str(shape()));
    return impl_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return impl_->data[row * cols() + col];
}

Tensor& Tensor::set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
}

void Tensor::zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
    else impl_->grad.clear();
}

Tensor Tensor::detach() const {
    return from(shape(), impl_->data, false);
}

void Tensor::backward() const {
    if (!defined() || numel() != 1) {
        throw DimensionError("backward requires a scalar loss, got shape " +
                             (defined() ? shape_str(shape()) : std::string("<undefined>")));
    }
    // Post-order DFS gives a topological order (inputs before outputs).
    static thread_local std::uint64_t traversal = 0;
    const std::uint64_t mark = ++traversal;
    std::vector<TensorImpl*> order;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    impl_->visit_mark = mark;
    while (!stack.empty()) {
        TensorImpl* current = stack.back().first;
        std::size_t next = stack.back().second;
        if (current->node && next < current->node->inputs.size()) {
            stack.back().second = next + 1;
            TensorImpl* child = current->node->inputs[next].get();
            if (child->visit_mark != mark) {
                child->visit_mark = mark;
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(current);
            stack.pop_back();
        }
    }

    for (auto* t : order) {
        if (t->node) t->grad.assign(t->data.size(), 0.0);
    }
    if (impl_->node) {
        impl_->grad[0] = 1.0;
    } else if (double* g = impl_->grad_buffer()) {
        g[0] += 1.0;
        return;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->node) (*it)->node->backward(**it);
    }
}

namespace detail {

Tensor make_output(Shape shape, std::vector<double> data, const char* op,
                   std::vector<std::shared_ptr<TensorImpl>> inputs,
                   std::function<void(const TensorImpl&)> backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool track = grad_enabled() &&
                 std::any_of(inputs.begin(), inputs.end(),
                             [](const auto& in) { return in->requires_grad; });
    if (track) {
        impl->requires_grad = true;
        impl->node = std::make_shared<GradNode>(
            GradNode{op, std::move(inputs), std::move(backward)});
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

}  // namespace poiformer
