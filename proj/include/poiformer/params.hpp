#pragma once

#include <string>
#include <utility>
#include <vector>

#include "poiformer/rng.hpp"
#include "poiformer/tensor.hpp"

namespace poiformer {

/// Ordered, named collection of learnable tensors. Insertion order is the
/// checkpoint order.
class ParamStore {
public:
    Tensor add(std::string name, Tensor tensor);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;
    std::size_t total_size() const;

    void zero_grad();
    /// Copies data (not graph state) from a store with the same layout.
    void copy_data_from(const ParamStore& other);
    /// Deep copy of every tensor's data.
    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& snapshot);

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Learnable tensor with entries drawn from N(0, stddev^2).
Tensor init_normal(Shape shape, double stddev, Rng& rng);

}  // namespace poiformer
