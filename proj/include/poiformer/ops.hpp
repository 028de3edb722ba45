#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "poiformer/rng.hpp"
#include "poiformer/tensor.hpp"

namespace poiformer {

// Binary arithmetic broadcasts the right operand when it is the same shape,
// a single value, or a [1 x cols] / [cols] row over a matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
Tensor relu(const Tensor& t);

/// Inverted dropout. Identity when `training` is false or `rate` is zero.
Tensor dropout(const Tensor& t, double rate, Rng& rng, bool training);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& t, std::size_t axis);
Tensor log_softmax(const Tensor& t, std::size_t axis);

/// Normalizes over the last axis, then applies gamma * x + beta.
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Mean of consecutive row groups: output row s averages `lengths[s]` rows.
Tensor segment_mean(const Tensor& t, std::span<const std::size_t> lengths);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

/// Divides each row by max(norm, eps).
Tensor l2_normalize_rows(const Tensor& t, double eps = 1e-12);

/// out[b, k] = a[b] . c[b * K + k] where K = c.rows() / a.rows().
Tensor group_dot(const Tensor& a, const Tensor& c);

/// out[r] = t[r, cols[r]], shaped [rows x 1].
Tensor take_along_rows(const Tensor& t, std::span<const std::size_t> cols);

/// Row-major attention weights captured per (segment, head).
struct AttentionProbe {
    struct Entry {
        std::size_t query_rows = 0;
        std::size_t key_rows = 0;
        std::vector<double> weights;  // query_rows x key_rows
    };
    std::vector<Entry> entries;  // segment-major, head-minor
};

/// Multi-head scaled dot-product attention over packed variable-length
/// sequences. Rows of `q` are split into segments by `q_lengths`, rows of
/// `k`/`v` by `k_lengths`; segment s of the queries attends only to segment
/// s of the keys. Columns are split into `heads` equal slices.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const std::size_t> q_lengths,
                 std::span<const std::size_t> k_lengths, std::size_t heads, double scale,
                 AttentionProbe* probe = nullptr);

/// Names of every differentiable op defined above.
std::span<const std::string_view> registered_ops();

}  // namespace poiformer
