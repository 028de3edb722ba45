#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "poiformer/tensor.hpp"

namespace poiformer {

struct GradReport {
    std::string op_name;
    double max_rel_error = 0.0;
    std::size_t num_params_checked = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `h`, element by element over every tensor in
/// `params`. Relative error is |a - n| / max(1e-8, |a| + |n|).
///
/// `f` must rebuild its graph from the current parameter data on every call
/// and be deterministic (reseed any generator it uses).
GradReport grad_check(std::string name, const std::function<Tensor()>& f,
                      std::span<const Tensor> params, double h = 1e-5);

/// One report per entry of registered_ops(), each on a small random case.
std::vector<GradReport> check_registered_ops(std::uint64_t seed);

}  // namespace poiformer
