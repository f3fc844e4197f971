#include "iamnn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace iamnn {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {
uint64_t next_node_id() {
    static std::atomic<uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.p_ = std::make_shared<Storage>();
    t.p_->shape = std::move(shape);
    t.p_->values.assign(static_cast<size_t>(shape_numel(t.p_->shape)), T(0));
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int64_t> shape, T value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.p_->values) v = value;
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<int64_t> shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("tensor init: shape " + shape_str(shape) + " expects " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    Tensor t;
    t.p_ = std::make_shared<Storage>();
    t.p_->shape = std::move(shape);
    t.p_->values = std::move(values);
    return t;
}

template <typename T>
T Tensor<T>::scalar() const {
    if (numel() != 1) {
        throw RankError("scalar() on tensor of shape " + shape_str(shape()));
    }
    return p_->values[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    if (p_->grad.empty()) p_->grad.assign(p_->values.size(), T(0));
    return p_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return p_->grad;
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> delta) {
    auto g = grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename T>
Tensor<T> Tensor<T>::clone_values() const {
    Tensor t;
    t.p_ = std::make_shared<Storage>();
    t.p_->shape = p_->shape;
    t.p_->values = p_->values;
    return t;
}

namespace {
template <typename T>
Graph<T>*& current_graph_slot() {
    thread_local Graph<T>* slot = nullptr;
    return slot;
}
}  // namespace

template <typename T>
Graph<T>::Graph() {
    prev_ = current_graph_slot<T>();
    current_graph_slot<T>() = this;
}

template <typename T>
Graph<T>::~Graph() {
    current_graph_slot<T>() = prev_;
}

template <typename T>
Graph<T>* Graph<T>::current() {
    return current_graph_slot<T>();
}

template <typename T>
void Graph<T>::record(const char* kind, std::vector<uint64_t> input_ids, uint64_t output_id,
                      std::function<bool()> backward) {
    entries_.push_back(Entry{kind, std::move(input_ids), output_id, std::move(backward)});
}

template <typename T>
void Graph<T>::backward(Tensor<T> loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw RankError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    loss.grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward();
    }
    entries_.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace iamnn
