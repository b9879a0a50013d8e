#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "protomargin/tensor.hpp"

namespace protomargin {

/// Named learnable parameters with matching gradient accumulators. Entries
/// keep insertion order, which fixes the layout of checkpoints and the
/// traversal order of the gradient checker. Single-writer: callers must not
/// run two updates on one store concurrently.
template <typename T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    void add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw std::invalid_argument("param store: duplicate name '" + name + "'");
        index_[name] = entries_.size();
        Tensor<T> grad(value.shape());
        entries_.push_back(Entry{name, std::move(value), std::move(grad)});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& value(const std::string& name) { return entries_[find(name)].value; }
    const Tensor<T>& value(const std::string& name) const { return entries_[find(name)].value; }
    Tensor<T>& grad(const std::string& name) { return entries_[find(name)].grad; }
    const Tensor<T>& grad(const std::string& name) const { return entries_[find(name)].grad; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    /// Convert between precisions (f32 training store -> f64 oracle store and back).
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries_) {
            std::vector<U> data(e.value.vec().begin(), e.value.vec().end());
            out.add(e.name, Tensor<U>(e.value.shape(), std::move(data)));
        }
        return out;
    }

  private:
    size_t find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("param store: unknown name '" + name + "'");
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

/// Plain SGD: value <- value - lr * grad, gradients zeroed afterwards.
template <typename T>
void sgd_step(ParamStore<T>& store, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: learning rate must be positive, got " + std::to_string(lr));
    for (auto& e : store.entries()) {
        T* v = e.value.data();
        const T* g = e.grad.data();
        int64_t n = e.value.numel();
        for (int64_t i = 0; i < n; ++i) v[i] -= static_cast<T>(lr) * g[i];
        e.grad.fill(T(0));
    }
}

}  // namespace protomargin
