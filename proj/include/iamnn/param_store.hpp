#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "iamnn/errors.hpp"
#include "iamnn/tensor.hpp"

namespace iamnn {

// Flat registry of named tensors in registration order.  Trainable entries
// are the learned parameters; non-trainable entries are state buffers
// (batchnorm running statistics) that checkpoints must still capture.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable;
    };

    void add(std::string name, Tensor<T> tensor, bool trainable) {
        if (index_.count(name)) {
            throw ContractError("ParamStore: duplicate name " + name);
        }
        index_[name] = entries_.size();
        entries_.push_back(Entry{std::move(name), std::move(tensor), trainable});
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamStore: unknown name " + name);
        return entries_[it->second].tensor;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    int64_t trainable_scalar_count() const {
        int64_t n = 0;
        for (const auto& e : entries_) {
            if (e.trainable) n += e.tensor.numel();
        }
        return n;
    }

    void set_requires_grad(bool v) {
        for (auto& e : entries_) {
            if (e.trainable) e.tensor.set_requires_grad(v);
        }
    }

    void zero_grads() {
        for (auto& e : entries_) {
            if (e.trainable) e.tensor.zero_grad();
        }
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace iamnn
