#include "poiformer/params.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

namespace poiformer {

Tensor ParamStore::add(std::string name, Tensor tensor) {
    if (contains(name)) throw std::invalid_argument(fmt::format("duplicate parameter '{}'", name));
    tensor.set_requires_grad(true);
    entries_.emplace_back(std::move(name), tensor);
    return tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw std::out_of_range(fmt::format("no parameter named '{}'", name));
}

bool ParamStore::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) {
        Tensor t = e.second;
        t.zero_grad();
    }
}

void ParamStore::copy_data_from(const ParamStore& other) {
    if (other.entries_.size() != entries_.size()) {
        throw std::invalid_argument("parameter stores differ in layout");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        Tensor dst = entries_[i].second;
        const Tensor& src = other.entries_[i].second;
        if (entries_[i].first != other.entries_[i].first || dst.shape() != src.shape()) {
            throw std::invalid_argument(
                fmt::format("parameter '{}' does not match '{}'", entries_[i].first, other.entries_[i].first));
        }
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.second.data().begin(), e.second.data().end());
    return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& snapshot) {
    if (snapshot.size() != entries_.size()) throw std::invalid_argument("snapshot layout mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        Tensor t = entries_[i].second;
        if (snapshot[i].size() != t.numel()) throw std::invalid_argument("snapshot layout mismatch");
        std::copy(snapshot[i].begin(), snapshot[i].end(), t.data().begin());
    }
}

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
    std::vector<double> values(numel_of(shape));
    for (auto& v : values) v = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace poiformer
