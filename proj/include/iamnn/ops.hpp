#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "iamnn/tensor.hpp"

namespace iamnn {

// Thread-local multiply-accumulate counter for the conv kernels.  Used by
// the cost-meter cross-check tests; off by default.
struct ConvMacCounter {
    static bool& enabled();
    static uint64_t& count();
    static void reset() { count() = 0; }
};

namespace ops {

// --- convolution / pooling ---

// No bias: every conv in this codebase is followed by batchnorm.
template <typename T>
Tensor<T> conv2d(Tensor<T> input, Tensor<T> weight, int stride, int padding);

template <typename T>
Tensor<T> maxpool(Tensor<T> input, int kernel, int stride, int padding);

template <typename T>
Tensor<T> maxpool2x2(Tensor<T> input) {
    return maxpool(input, 2, 2, 0);
}

// [B,C,H,W] -> [B,C]
template <typename T>
Tensor<T> global_avg_pool(Tensor<T> input);

// --- batch normalization ---

// Train mode normalizes with batch statistics over (B,H,W) per channel and
// updates the running buffers in place (momentum update, unbiased variance);
// eval mode normalizes with the running buffers.  sample_mask, when given,
// restricts the statistics (and the mean/variance gradient terms) to the
// masked samples while the affine transform is still applied to every sample.
template <typename T>
Tensor<T> batchnorm(Tensor<T> input, Tensor<T> gamma, Tensor<T> beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool train, T momentum,
                    T epsilon, const std::vector<uint8_t>* sample_mask = nullptr);

// --- elementwise / shape ---

template <typename T>
Tensor<T> relu(Tensor<T> x);

template <typename T>
Tensor<T> sigmoid(Tensor<T> x);

template <typename T>
Tensor<T> tanh_op(Tensor<T> x);

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b);

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b);

// alpha * x + beta, scalars.
template <typename T>
Tensor<T> affine(Tensor<T> x, T alpha, T beta);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> concat_channels(Tensor<T> a, Tensor<T> b) {
    Tensor<T> parts[2] = {a, b};
    return concat_channels(std::span<const Tensor<T>>(parts, 2));
}

template <typename T>
Tensor<T> concat_channels(Tensor<T> a, Tensor<T> b, Tensor<T> c) {
    Tensor<T> parts[3] = {a, b, c};
    return concat_channels(std::span<const Tensor<T>>(parts, 3));
}

// x: [B, d1, ...], w: [B]; scales every element of sample b by w[b].
template <typename T>
Tensor<T> per_sample_scale(Tensor<T> x, Tensor<T> w);

// Same element count, new shape; gradients pass straight through.
template <typename T>
Tensor<T> reshape(Tensor<T> x, std::vector<int64_t> new_shape);

// --- linear / loss / reductions ---

// x: [B,in], weight: [out,in], bias: [out] -> [B,out]
template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> weight, Tensor<T> bias);

// Mean over the batch, max-subtracted for stability.
template <typename T>
Tensor<T> softmax_cross_entropy(Tensor<T> logits, std::span<const int> labels);

template <typename T>
Tensor<T> mean_all(Tensor<T> x);

// --- non-differentiable helpers ---

template <typename T>
std::vector<int> argmax_rows(Tensor<T> logits);

template <typename T>
bool all_finite(Tensor<T> x);

}  // namespace ops
}  // namespace iamnn
