#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iamnn/errors.hpp"

namespace iamnn {

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

namespace detail {
// Monotone id stamped on every storage; graph entries use it to check
// that inputs were created before their consumers.
uint64_t next_node_id();
}  // namespace detail

// Dense N-d value buffer plus an optional same-shape gradient buffer.
// Tensor is a shared handle; copies alias the same storage.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, T value);
    static Tensor from(std::vector<int64_t> shape, std::vector<T> values);
    static Tensor scalar_tensor(T value) { return from({1}, {value}); }

    bool defined() const { return static_cast<bool>(p_); }
    const std::vector<int64_t>& shape() const { return p_->shape; }
    size_t rank() const { return p_->shape.size(); }
    int64_t dim(size_t i) const { return p_->shape[i]; }
    int64_t numel() const { return static_cast<int64_t>(p_->values.size()); }

    std::span<T> values() { return p_->values; }
    std::span<const T> values() const { return p_->values; }
    T scalar() const;

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        p_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }
    // Allocates a zeroed gradient buffer on first access.
    std::span<T> grad();
    std::span<const T> grad() const;
    void zero_grad() {
        for (auto& g : p_->grad) g = T(0);
    }
    void drop_grad() { p_->grad.clear(); }
    void accumulate_grad(std::span<const T> delta);

    // Deep copy of values only (fresh storage, no grad, no history).
    Tensor clone_values() const;

    uint64_t node_id() const { return p_->id; }
    bool same_storage(const Tensor& other) const { return p_ == other.p_; }

private:
    struct Storage {
        std::vector<int64_t> shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
        uint64_t id = detail::next_node_id();
    };

    std::shared_ptr<Storage> p_;
};

// Recorded forward tape for one forward pass.  Ops append entries in
// execution order, which is a topological order by construction;
// backward() replays the tape once in reverse.  Single-threaded per
// instance; the active graph is tracked per thread.
template <typename T>
class Graph {
public:
    struct Entry {
        const char* kind;
        std::vector<uint64_t> input_ids;
        uint64_t output_id;
        // Returns true when the output actually carried gradient
        // (entries whose outputs are off every path to the loss are skipped).
        std::function<bool()> backward;
    };

    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* current();

    void record(const char* kind, std::vector<uint64_t> input_ids, uint64_t output_id,
                std::function<bool()> backward);

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, then
    // frees all recorded entries.
    void backward(Tensor<T> loss);

    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
    Graph* prev_ = nullptr;
};

// True when a graph is active on this thread and x participates in it.
template <typename T>
bool grad_active(const Tensor<T>& x) {
    return Graph<T>::current() != nullptr && x.defined() && x.requires_grad();
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace iamnn
