#include "poiformer/grad_check.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "poiformer/ops.hpp"
#include "poiformer/rng.hpp"

namespace poiformer {

GradReport grad_check(std::string name, const std::function<Tensor()>& f,
                      std::span<const Tensor> params, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
    for (auto p : params) p.zero_grad();
    Tensor loss = f();
    if (!std::isfinite(loss.item())) throw NumericError(name + ": non-finite loss");
    loss.backward();

    GradReport report{std::move(name), 0.0, 0};
    NoGradGuard no_grad;
    for (auto p : params) {
        auto data = p.data();
        const auto analytic = std::vector<double>(p.grad().begin(), p.grad().end());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = f().item();
            data[i] = saved - h;
            const double down = f().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                throw NumericError(report.op_name + ": non-finite gradient");
            }
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.num_params_checked;
        }
    }
    return report;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double spread = 1.0) {
    std::vector<double> values(numel_of(shape));
    for (auto& v : values) v = spread * (2.0 * rng.uniform() - 1.0);
    return Tensor::from(std::move(shape), std::move(values), true);
}

// Values kept away from zero so that relu kinks stay out of reach of h.
Tensor away_from_zero(Shape shape, Rng& rng) {
    std::vector<double> values(numel_of(shape));
    for (auto& v : values) {
        const double mag = 0.1 + rng.uniform();
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor::from(std::move(shape), std::move(values), true);
}

// Projects an op output onto a fixed random direction so every output
// element contributes to the scalar under test.
Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

Tensor constant_like(const Tensor& t, Rng& rng) {
    Tensor w = random_tensor(t.shape(), rng);
    w.set_requires_grad(false);
    return w;
}

struct Case {
    std::vector<Tensor> params;
    std::function<Tensor()> f;
};

Case make_case(std::string_view op, Rng& rng) {
    Case c;
    auto unary = [&](Tensor x, auto fn) {
        NoGradGuard g;
        Tensor w = constant_like(fn(x), rng);
        c.params = {x};
        c.f = [x, w, fn] { return project(fn(x), w); };
    };
    auto binary = [&](Tensor a, Tensor b, auto fn) {
        NoGradGuard g;
        Tensor w = constant_like(fn(a, b), rng);
        c.params = {a, b};
        c.f = [a, b, w, fn] { return project(fn(a, b), w); };
    };

    if (op == "add") {
        binary(random_tensor({3, 4}, rng), random_tensor({1, 4}, rng),
               [](const Tensor& a, const Tensor& b) { return add(a, b); });
    } else if (op == "sub") {
        binary(random_tensor({3, 4}, rng), random_tensor({3, 4}, rng),
               [](const Tensor& a, const Tensor& b) { return sub(a, b); });
    } else if (op == "mul") {
        binary(random_tensor({3, 4}, rng), random_tensor({}, rng),
               [](const Tensor& a, const Tensor& b) { return mul(a, b); });
    } else if (op == "div") {
        Tensor b = random_tensor({1, 4}, rng);
        for (auto& v : b.data()) v = 0.5 + std::abs(v);
        binary(random_tensor({3, 4}, rng), b,
               [](const Tensor& a, const Tensor& d) { return div(a, d); });
    } else if (op == "scale") {
        unary(random_tensor({2, 5}, rng), [](const Tensor& x) { return scale(x, -1.7); });
    } else if (op == "relu") {
        unary(away_from_zero({3, 4}, rng), [](const Tensor& x) { return relu(x); });
    } else if (op == "dropout") {
        unary(random_tensor({4, 5}, rng), [](const Tensor& x) {
            Rng local(1234);
            return dropout(x, 0.3, local, true);
        });
    } else if (op == "matmul") {
        binary(random_tensor({3, 4}, rng), random_tensor({4, 2}, rng),
               [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
    } else if (op == "transpose") {
        unary(random_tensor({3, 4}, rng), [](const Tensor& x) { return transpose(x); });
    } else if (op == "softmax") {
        unary(random_tensor({3, 4}, rng, 2.0), [](const Tensor& x) { return softmax(x, 0); });
    } else if (op == "log_softmax") {
        unary(random_tensor({3, 4}, rng, 2.0), [](const Tensor& x) { return log_softmax(x, 1); });
    } else if (op == "layer_norm") {
        Tensor x = random_tensor({3, 5}, rng, 2.0);
        Tensor g = random_tensor({5}, rng);
        Tensor b = random_tensor({5}, rng);
        NoGradGuard guard;
        Tensor w = constant_like(x, rng);
        c.params = {x, g, b};
        c.f = [x, g, b, w] { return project(layer_norm(x, g, b, 1e-5), w); };
    } else if (op == "gather_rows") {
        unary(random_tensor({4, 3}, rng), [](const Tensor& x) {
            const std::vector<std::size_t> idx{2, 0, 2, 3, 1};
            return gather_rows(x, idx);
        });
    } else if (op == "concat_rows") {
        binary(random_tensor({2, 3}, rng), random_tensor({3, 3}, rng),
               [](const Tensor& a, const Tensor& b) {
                   const std::vector<Tensor> parts{a, b, a};
                   return concat_rows(parts);
               });
    } else if (op == "slice_rows") {
        unary(random_tensor({5, 3}, rng), [](const Tensor& x) { return slice_rows(x, 1, 4); });
    } else if (op == "segment_mean") {
        unary(random_tensor({6, 3}, rng), [](const Tensor& x) {
            const std::vector<std::size_t> lens{1, 3, 2};
            return segment_mean(x, lens);
        });
    } else if (op == "sum") {
        unary(random_tensor({3, 3}, rng), [](const Tensor& x) { return mul(sum(x), sum(x)); });
    } else if (op == "mean") {
        unary(random_tensor({3, 3}, rng), [](const Tensor& x) { return mul(mean(x), mean(x)); });
    } else if (op == "l2_normalize_rows") {
        unary(random_tensor({3, 4}, rng), [](const Tensor& x) { return l2_normalize_rows(x); });
    } else if (op == "group_dot") {
        binary(random_tensor({2, 3}, rng), random_tensor({6, 3}, rng),
               [](const Tensor& a, const Tensor& b) { return group_dot(a, b); });
    } else if (op == "take_along_rows") {
        unary(random_tensor({3, 4}, rng), [](const Tensor& x) {
            const std::vector<std::size_t> cols{3, 0, 2};
            return take_along_rows(log_softmax(x, 1), cols);
        });
    } else if (op == "attention") {
        Tensor q = random_tensor({4, 4}, rng);
        Tensor k = random_tensor({5, 4}, rng);
        Tensor v = random_tensor({5, 4}, rng);
        NoGradGuard guard;
        Tensor w = constant_like(q, rng);
        c.params = {q, k, v};
        c.f = [q, k, v, w] {
            const std::vector<std::size_t> ql{1, 3}, kl{2, 3};
            return project(attention(q, k, v, ql, kl, 2, 0.7), w);
        };
    } else {
        throw std::invalid_argument(fmt::format("no gradient case for op '{}'", op));
    }
    return c;
}

}  // namespace

std::vector<GradReport> check_registered_ops(std::uint64_t seed) {
    std::vector<GradReport> reports;
    Rng rng(seed);
    for (auto op : registered_ops()) {
        Case c = make_case(op, rng);
        reports.push_back(grad_check(std::string(op), c.f, c.params, 1e-5));
    }
    return reports;
}

}  // namespace poiformer
