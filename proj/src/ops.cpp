#include "poiformer/ops.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace poiformer {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Stride = Eigen::OuterStride<>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Stride>;
using MutStridedMap = Eigen::Map<RowMat, 0, Stride>;

using ImplPtr = std::shared_ptr<TensorImpl>;

void require_matrix(const Tensor& t, const char* op) {
    if (!t.defined() || t.rank() != 2) {
        throw DimensionError(fmt::format("{}: expected a matrix, got shape {}", op,
                                         t.defined() ? shape_str(t.shape()) : "<undefined>"));
    }
}

enum class Broadcast { same, scalar, row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.numel() == 1) return Broadcast::scalar;
    if (a.rank() == 2 && b.numel() == a.cols() &&
        (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1))) {
        return Broadcast::row;
    }
    throw DimensionError(fmt::format("{}: shapes {} and {} are not broadcast-compatible", op,
                                     shape_str(a.shape()), shape_str(b.shape())));
}

inline std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
    switch (kind) {
        case Broadcast::same: return i;
        case Broadcast::scalar: return 0;
        case Broadcast::row: return i % cols;
    }
    return i;
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward fwd, GradA ga,
              GradB gb) {
    const Broadcast kind = broadcast_kind(a, b, op);
    const std::size_t cols = a.rank() == 2 ? a.cols() : 1;
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i], bd[b_index(kind, i, cols)]);
    ImplPtr ai = a.impl(), bi = b.impl();
    return detail::make_output(
        a.shape(), std::move(out), op, {ai, bi}, [ai, bi, kind, cols, ga, gb](const TensorImpl& y) {
            double* gA = ai->grad_buffer();
            double* gB = bi->grad_buffer();
            for (std::size_t i = 0; i < y.grad.size(); ++i) {
                const std::size_t j = b_index(kind, i, cols);
                const double x1 = ai->data[i], x2 = bi->data[j];
                if (gA) gA[i] += ga(x1, x2, y.grad[i]);
                if (gB) gB[j] += gb(x1, x2, y.grad[i]);
            }
        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& t, double factor) {
    std::vector<double> out(t.data().begin(), t.data().end());
    for (auto& v : out) v *= factor;
    ImplPtr ti = t.impl();
    return detail::make_output(t.shape(), std::move(out), "scale", {ti},
                               [ti, factor](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   for (std::size_t i = 0; i < y.grad.size(); ++i)
                                       g[i] += factor * y.grad[i];
                               });
}

Tensor relu(const Tensor& t) {
    std::vector<double> out(t.data().begin(), t.data().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    ImplPtr ti = t.impl();
    return detail::make_output(t.shape(), std::move(out), "relu", {ti}, [ti](const TensorImpl& y) {
        double* g = ti->grad_buffer();
        for (std::size_t i = 0; i < y.grad.size(); ++i)
            if (ti->data[i] > 0.0) g[i] += y.grad[i];
    });
}

Tensor dropout(const Tensor& t, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw std::invalid_argument(fmt::format("dropout: rate {} outside [0, 1)", rate));
    }
    if (!training || rate == 0.0) return t;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(t.numel());
    for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.data()[i] * mask[i];
    ImplPtr ti = t.impl();
    return detail::make_output(t.shape(), std::move(out), "dropout", {ti},
                               [ti, mask = std::move(mask)](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   for (std::size_t i = 0; i < y.grad.size(); ++i)
                                       g[i] += mask[i] * y.grad[i];
                               });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError(fmt::format("matmul: inner dimensions differ for {} and {}",
                                         shape_str(a.shape()), shape_str(b.shape())));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    ImplPtr ai = a.impl(), bi = b.impl();
    return detail::make_output({m, n}, std::move(out), "matmul", {ai, bi},
                               [ai, bi, m, k, n](const TensorImpl& y) {
                                   ConstMap dC(y.grad.data(), m, n);
                                   if (double* gA = ai->grad_buffer()) {
                                       MutMap(gA, m, k).noalias() +=
                                           dC * ConstMap(bi->data.data(), k, n).transpose();
                                   }
                                   if (double* gB = bi->grad_buffer()) {
                                       MutMap(gB, k, n).noalias() +=
                                           ConstMap(ai->data.data(), m, k).transpose() * dC;
                                   }
                               });
}

Tensor transpose(const Tensor& t) {
    require_matrix(t, "transpose");
    const std::size_t r = t.rows(), c = t.cols();
    std::vector<double> out(r * c);
    MutMap(out.data(), c, r) = ConstMap(t.data().data(), r, c).transpose();
    ImplPtr ti = t.impl();
    return detail::make_output({c, r}, std::move(out), "transpose", {ti},
                               [ti, r, c](const TensorImpl& y) {
                                   MutMap(ti->grad_buffer(), r, c) +=
                                       ConstMap(y.grad.data(), c, r).transpose();
                               });
}

namespace {

struct AxisLayout {
    std::size_t outer = 1, len = 1, inner = 1;
    std::size_t at(std::size_t o, std::size_t j, std::size_t i) const {
        return (o * len + j) * inner + i;
    }
};

AxisLayout axis_layout(const Tensor& t, std::size_t axis, const char* op) {
    if (axis >= t.rank()) {
        throw DimensionError(fmt::format("{}: axis {} out of range for shape {}", op, axis,
                                         shape_str(t.shape())));
    }
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= t.shape()[i];
    l.len = t.shape()[axis];
    for (std::size_t i = axis + 1; i < t.rank(); ++i) l.inner *= t.shape()[i];
    return l;
}

}  // namespace

Tensor softmax(const Tensor& t, std::size_t axis) {
    const AxisLayout l = axis_layout(t, axis, "softmax");
    const auto x = t.data();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, x[l.at(o, j, i)]);
            double total = 0.0;
            for (std::size_t j = 0; j < l.len; ++j) {
                const double e = std::exp(x[l.at(o, j, i)] - mx);
                out[l.at(o, j, i)] = e;
                total += e;
            }
            for (std::size_t j = 0; j < l.len; ++j) out[l.at(o, j, i)] /= total;
        }
    }
    ImplPtr ti = t.impl();
    return detail::make_output(t.shape(), std::move(out), "softmax", {ti}, [ti, l](const TensorImpl& y) {
        double* g = ti->grad_buffer();
        for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t i = 0; i < l.inner; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < l.len; ++j) {
                    const std::size_t p = l.at(o, j, i);
                    dot += y.grad[p] * y.data[p];
                }
                for (std::size_t j = 0; j < l.len; ++j) {
                    const std::size_t p = l.at(o, j, i);
                    g[p] += y.data[p] * (y.grad[p] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& t, std::size_t axis) {
    const AxisLayout l = axis_layout(t, axis, "log_softmax");
    const auto x = t.data();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, x[l.at(o, j, i)]);
            double total = 0.0;
            for (std::size_t j = 0; j < l.len; ++j) total += std::exp(x[l.at(o, j, i)] - mx);
            const double lse = mx + std::log(total);
            for (std::size_t j = 0; j < l.len; ++j) out[l.at(o, j, i)] = x[l.at(o, j, i)] - lse;
        }
    }
    ImplPtr ti = t.impl();
    return detail::make_output(t.shape(), std::move(out), "log_softmax", {ti},
                               [ti, l](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   for (std::size_t o = 0; o < l.outer; ++o) {
                                       for (std::size_t i = 0; i < l.inner; ++i) {
                                           double gsum = 0.0;
                                           for (std::size_t j = 0; j < l.len; ++j)
                                               gsum += y.grad[l.at(o, j, i)];
                                           for (std::size_t j = 0; j < l.len; ++j) {
                                               const std::size_t p = l.at(o, j, i);
                                               g[p] += y.grad[p] - std::exp(y.data[p]) * gsum;
                                           }
                                       }
                                   }
                               });
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument(fmt::format("layer_norm: eps {} must be > 0", eps));
    if (t.rank() == 0) throw DimensionError("layer_norm: scalar input");
    const std::size_t width = t.shape().back();
    if (gamma.numel() != width || beta.numel() != width) {
        throw DimensionError(fmt::format("layer_norm: gamma {} / beta {} do not match width {}",
                                         shape_str(gamma.shape()), shape_str(beta.shape()), width));
    }
    const std::size_t rows = t.numel() / width;
    const auto x = t.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data() + r * width;
        double mu = 0.0;
        for (std::size_t c = 0; c < width; ++c) mu += row[c];
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(width);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < width; ++c) {
            const std::size_t p = r * width + c;
            xhat[p] = (row[c] - mu) * inv_std[r];
            out[p] = xhat[p] * gm[c] + bt[c];
        }
    }
    ImplPtr ti = t.impl(), gi = gamma.impl(), bi = beta.impl();
    return detail::make_output(
        t.shape(), std::move(out), "layer_norm", {ti, gi, bi},
        [ti, gi, bi, width, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            const TensorImpl& y) {
            double* gx = ti->grad_buffer();
            double* gg = gi->grad_buffer();
            double* gb = bi->grad_buffer();
            std::vector<double> dxhat(width);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t c = 0; c < width; ++c) {
                    const std::size_t p = r * width + c;
                    const double g = y.grad[p];
                    if (gg) gg[c] += g * xhat[p];
                    if (gb) gb[c] += g;
                    dxhat[c] = g * gi->data[c];
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xhat[p];
                }
                if (!gx) continue;
                mean_d /= static_cast<double>(width);
                mean_dx /= static_cast<double>(width);
                for (std::size_t c = 0; c < width; ++c) {
                    const std::size_t p = r * width + c;
                    gx[p] += inv_std[r] * (dxhat[c] - mean_d - xhat[p] * mean_dx);
                }
            }
        });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
    require_matrix(table, "gather_rows");
    const std::size_t rows = table.rows(), cols = table.cols();
    std::vector<double> out(indices.size() * cols);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows) {
            throw std::out_of_range(
                fmt::format("gather_rows: index {} outside table of {} rows", indices[r], rows));
        }
        std::copy_n(table.data().data() + indices[r] * cols, cols, out.data() + r * cols);
    }
    ImplPtr ti = table.impl();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return detail::make_output({indices.size(), cols}, std::move(out), "gather_rows", {ti},
                               [ti, cols, idx = std::move(idx)](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   for (std::size_t r = 0; r < idx.size(); ++r) {
                                       double* dst = g + idx[r] * cols;
                                       const double* src = y.grad.data() + r * cols;
                                       for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                                   }
                               });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    std::vector<ImplPtr> inputs;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.cols() != cols) {
            throw DimensionError(fmt::format("concat_rows: column mismatch {} vs {}",
                                             shape_str(p.shape()), shape_str(parts.front().shape())));
        }
        offsets.push_back(rows * cols);
        rows += p.rows();
        inputs.push_back(p.impl());
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    auto captured = inputs;
    return detail::make_output({rows, cols}, std::move(out), "concat_rows", std::move(inputs),
                               [captured = std::move(captured), offsets](const TensorImpl& y) {
                                   for (std::size_t i = 0; i < captured.size(); ++i) {
                                       double* g = captured[i]->grad_buffer();
                                       if (!g) continue;
                                       const std::size_t n = captured[i]->data.size();
                                       for (std::size_t j = 0; j < n; ++j) g[j] += y.grad[offsets[i] + j];
                                   }
                               });
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    require_matrix(t, "slice_rows");
    if (begin > end || end > t.rows()) {
        throw DimensionError(fmt::format("slice_rows: range [{}, {}) invalid for shape {}", begin,
                                         end, shape_str(t.shape())));
    }
    const std::size_t cols = t.cols();
    std::vector<double> out(t.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                            t.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
    ImplPtr ti = t.impl();
    return detail::make_output({end - begin, cols}, std::move(out), "slice_rows", {ti},
                               [ti, offset = begin * cols](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   for (std::size_t j = 0; j < y.grad.size(); ++j)
                                       g[offset + j] += y.grad[j];
                               });
}

Tensor segment_mean(const Tensor& t, std::span<const std::size_t> lengths) {
    require_matrix(t, "segment_mean");
    const std::size_t cols = t.cols();
    std::size_t total = 0;
    for (auto n : lengths) {
        if (n == 0) throw DimensionError("segment_mean: empty segment");
        total += n;
    }
    if (total != t.rows()) {
        throw DimensionError(fmt::format("segment_mean: segments cover {} rows, tensor has {}",
                                         total, t.rows()));
    }
    std::vector<double> out(lengths.size() * cols, 0.0);
    std::size_t row = 0;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
        for (std::size_t r = 0; r < lengths[s]; ++r, ++row)
            for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] += t.data()[row * cols + c];
        for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] /= static_cast<double>(lengths[s]);
    }
    ImplPtr ti = t.impl();
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    return detail::make_output({lengths.size(), cols}, std::move(out), "segment_mean", {ti},
                               [ti, cols, lens = std::move(lens)](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   std::size_t row = 0;
                                   for (std::size_t s = 0; s < lens.size(); ++s) {
                                       const double w = 1.0 / static_cast<double>(lens[s]);
                                       for (std::size_t r = 0; r < lens[s]; ++r, ++row)
                                           for (std::size_t c = 0; c < cols; ++c)
                                               g[row * cols + c] += w * y.grad[s * cols + c];
                                   }
                               });
}

Tensor sum(const Tensor& t) {
    double total = 0.0;
    for (double v : t.data()) total += v;
    ImplPtr ti = t.impl();
    return detail::make_output({}, {total}, "sum", {ti}, [ti](const TensorImpl& y) {
        double* g = ti->grad_buffer();
        for (std::size_t i = 0; i < ti->data.size(); ++i) g[i] += y.grad[0];
    });
}

Tensor mean(const Tensor& t) {
    if (t.numel() == 0) throw DimensionError("mean: empty tensor");
    double total = 0.0;
    for (double v : t.data()) total += v;
    const double n = static_cast<double>(t.numel());
    ImplPtr ti = t.impl();
    return detail::make_output({}, {total / n}, "mean", {ti}, [ti, n](const TensorImpl& y) {
        double* g = ti->grad_buffer();
        for (std::size_t i = 0; i < ti->data.size(); ++i) g[i] += y.grad[0] / n;
    });
}

Tensor l2_normalize_rows(const Tensor& t, double eps) {
    require_matrix(t, "l2_normalize_rows");
    const std::size_t rows = t.rows(), cols = t.cols();
    std::vector<double> out(t.numel()), norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < cols; ++c) sq += t.data()[r * cols + c] * t.data()[r * cols + c];
        norms[r] = std::sqrt(sq);
        const double denom = std::max(norms[r], eps);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = t.data()[r * cols + c] / denom;
    }
    ImplPtr ti = t.impl();
    return detail::make_output(
        t.shape(), std::move(out), "l2_normalize_rows", {ti},
        [ti, rows, cols, eps, norms = std::move(norms)](const TensorImpl& y) {
            double* g = ti->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y.data.data() + r * cols;
                const double* gr = y.grad.data() + r * cols;
                if (norms[r] <= eps) {
                    for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gr[c] / eps;
                    continue;
                }
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
                for (std::size_t c = 0; c < cols; ++c)
                    g[r * cols + c] += (gr[c] - yr[c] * dot) / norms[r];
            }
        });
}

Tensor group_dot(const Tensor& a, const Tensor& c) {
    require_matrix(a, "group_dot");
    require_matrix(c, "group_dot");
    if (a.cols() != c.cols() || a.rows() == 0 || c.rows() % a.rows() != 0) {
        throw DimensionError(fmt::format("group_dot: incompatible shapes {} and {}",
                                         shape_str(a.shape()), shape_str(c.shape())));
    }
    const std::size_t batch = a.rows(), width = a.cols(), group = c.rows() / a.rows();
    std::vector<double> out(batch * group);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < group; ++k) {
            double dot = 0.0;
            const double* ar = a.data().data() + b * width;
            const double* cr = c.data().data() + (b * group + k) * width;
            for (std::size_t j = 0; j < width; ++j) dot += ar[j] * cr[j];
            out[b * group + k] = dot;
        }
    ImplPtr ai = a.impl(), ci = c.impl();
    return detail::make_output({batch, group}, std::move(out), "group_dot", {ai, ci},
                               [ai, ci, batch, width, group](const TensorImpl& y) {
                                   double* gA = ai->grad_buffer();
                                   double* gC = ci->grad_buffer();
                                   for (std::size_t b = 0; b < batch; ++b)
                                       for (std::size_t k = 0; k < group; ++k) {
                                           const double g = y.grad[b * group + k];
                                           const std::size_t crow = (b * group + k) * width;
                                           for (std::size_t j = 0; j < width; ++j) {
                                               if (gA) gA[b * width + j] += g * ci->data[crow + j];
                                               if (gC) gC[crow + j] += g * ai->data[b * width + j];
                                           }
                                       }
                               });
}

Tensor take_along_rows(const Tensor& t, std::span<const std::size_t> cols) {
    require_matrix(t, "take_along_rows");
    if (cols.size() != t.rows()) {
        throw DimensionError(fmt::format("take_along_rows: {} indices for {} rows", cols.size(),
                                         t.rows()));
    }
    const std::size_t width = t.cols();
    std::vector<double> out(cols.size());
    for (std::size_t r = 0; r < cols.size(); ++r) {
        if (cols[r] >= width) throw std::out_of_range("take_along_rows: column index out of range");
        out[r] = t.data()[r * width + cols[r]];
    }
    ImplPtr ti = t.impl();
    std::vector<std::size_t> idx(cols.begin(), cols.end());
    return detail::make_output({cols.size(), 1}, std::move(out), "take_along_rows", {ti},
                               [ti, width, idx = std::move(idx)](const TensorImpl& y) {
                                   double* g = ti->grad_buffer();
                                   for (std::size_t r = 0; r < idx.size(); ++r)
                                       g[r * width + idx[r]] += y.grad[r];
                               });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const std::size_t> q_lengths, std::span<const std::size_t> k_lengths,
                 std::size_t heads, double scale, AttentionProbe* probe) {
    require_matrix(q, "attention");
    require_matrix(k, "attention");
    require_matrix(v, "attention");
    const std::size_t width = q.cols();
    if (heads == 0 || width % heads != 0) {
        throw DimensionError(fmt::format("attention: width {} not divisible by {} heads", width, heads));
    }
    if (k.cols() != width || v.cols() != width || k.rows() != v.rows()) {
        throw DimensionError(fmt::format("attention: q {} k {} v {} are inconsistent",
                                         shape_str(q.shape()), shape_str(k.shape()),
                                         shape_str(v.shape())));
    }
    if (q_lengths.size() != k_lengths.size()) {
        throw DimensionError("attention: query and key segment counts differ");
    }
    std::size_t q_total = 0, k_total = 0;
    for (std::size_t s = 0; s < q_lengths.size(); ++s) {
        if (k_lengths[s] == 0 && q_lengths[s] > 0) {
            throw DimensionError("attention: empty key segment");
        }
        q_total += q_lengths[s];
        k_total += k_lengths[s];
    }
    if (q_total != q.rows() || k_total != k.rows()) {
        throw DimensionError("attention: segment lengths do not cover the inputs");
    }
    const std::size_t head_dim = width / heads;

    std::vector<double> out(q.rows() * width, 0.0);
    // Softmax weights per (segment, head), kept for the backward pass.
    std::vector<RowMat> weights;
    weights.reserve(q_lengths.size() * heads);
    std::size_t q0 = 0, k0 = 0;
    for (std::size_t s = 0; s < q_lengths.size(); ++s) {
        const std::size_t nq = q_lengths[s], nk = k_lengths[s];
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col = h * head_dim;
            ConstStridedMap Q(q.data().data() + q0 * width + col, nq, head_dim, Stride(width));
            ConstStridedMap K(k.data().data() + k0 * width + col, nk, head_dim, Stride(width));
            ConstStridedMap V(v.data().data() + k0 * width + col, nk, head_dim, Stride(width));
            RowMat P = (Q * K.transpose()) * scale;
            for (Eigen::Index r = 0; r < P.rows(); ++r) {
                const double mx = P.row(r).maxCoeff();
                P.row(r) = (P.row(r).array() - mx).exp();
                P.row(r) /= P.row(r).sum();
            }
            MutStridedMap(out.data() + q0 * width + col, nq, head_dim, Stride(width)).noalias() = P * V;
            if (probe) {
                AttentionProbe::Entry entry{nq, nk, std::vector<double>(P.data(), P.data() + P.size())};
                probe->entries.push_back(std::move(entry));
            }
            weights.push_back(std::move(P));
        }
        q0 += nq;
        k0 += nk;
    }

    ImplPtr qi = q.impl(), ki = k.impl(), vi = v.impl();
    std::vector<std::size_t> ql(q_lengths.begin(), q_lengths.end());
    std::vector<std::size_t> kl(k_lengths.begin(), k_lengths.end());
    return detail::make_output(
        q.shape(), std::move(out), "attention", {qi, ki, vi},
        [qi, ki, vi, ql = std::move(ql), kl = std::move(kl), weights = std::move(weights), heads,
         head_dim, width, scale](const TensorImpl& y) {
            double* gQ = qi->grad_buffer();
            double* gK = ki->grad_buffer();
            double* gV = vi->grad_buffer();
            std::size_t q0 = 0, k0 = 0, w = 0;
            for (std::size_t s = 0; s < ql.size(); ++s) {
                const std::size_t nq = ql[s], nk = kl[s];
                for (std::size_t h = 0; h < heads; ++h, ++w) {
                    const std::size_t col = h * head_dim;
                    const RowMat& P = weights[w];
                    ConstStridedMap dO(y.grad.data() + q0 * width + col, nq, head_dim, Stride(width));
                    ConstStridedMap Q(qi->data.data() + q0 * width + col, nq, head_dim, Stride(width));
                    ConstStridedMap K(ki->data.data() + k0 * width + col, nk, head_dim, Stride(width));
                    ConstStridedMap V(vi->data.data() + k0 * width + col, nk, head_dim, Stride(width));
                    if (gV) {
                        MutStridedMap(gV + k0 * width + col, nk, head_dim, Stride(width)).noalias() +=
                            P.transpose() * dO;
                    }
                    if (!gQ && !gK) continue;
                    RowMat dP = dO * V.transpose();
                    Eigen::VectorXd row_dot = (dP.array() * P.array()).rowwise().sum();
                    RowMat dS = P.array() * (dP.colwise() - row_dot).array();
                    dS *= scale;
                    if (gQ) {
                        MutStridedMap(gQ + q0 * width + col, nq, head_dim, Stride(width)).noalias() +=
                            dS * K;
                    }
                    if (gK) {
                        MutStridedMap(gK + k0 * width + col, nk, head_dim, Stride(width)).noalias() +=
                            dS.transpose() * Q;
                    }
                }
                q0 += nq;
                k0 += nk;
            }
        });
}

std::span<const std::string_view> registered_ops() {
    static constexpr std::array<std::string_view, 22> kOps = {
        "add",          "sub",        "mul",         "div",          "scale",
        "relu",         "dropout",    "matmul",      "transpose",    "softmax",
        "log_softmax",  "layer_norm", "gather_rows", "concat_rows",  "slice_rows",
        "segment_mean", "sum",        "mean",        "l2_normalize_rows",
        "group_dot",    "take_along_rows", "attention"};
    return kOps;
}

}  // namespace poiformer
