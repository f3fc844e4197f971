#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "iamnn/init.hpp"
#include "iamnn/ops.hpp"
#include "iamnn/param_store.hpp"
#include "iamnn/tensor.hpp"

namespace iamnn {

enum class Mode { Train, Eval };
enum class ActActivation { Relu, Tanh, Sigmoid };

struct BlockConfig {
    int channels = 16;
    int bottleneck_channels = 4;  // conventionally channels / 4
    int max_iterations = 2;
    int act_hidden = 64;
    double act_epsilon = 0.01;
    ActActivation act_activation = ActActivation::Relu;
};

// Per-sample record of one block's halting behaviour.
struct HaltingTrace {
    std::vector<double> raw_scores;  // h_1..h_N, each in (0,1)
    std::vector<double> weights;     // w_1..w_N, sums to 1
    int n_iters = 0;                 // N
    double remainder = 0.0;          // R = 1 - sum of scores before the final iteration
    double ponder = 0.0;             // N + R
};

// N = min(M, first n with cumulative score >= 1 - epsilon); w_i = h_i for
// i < N and w_N = the remainder, so the weights always sum to exactly 1.
HaltingTrace halting_rule(std::span<const double> scores, int max_iterations, double epsilon);

template <typename T>
struct BNSet {
    Tensor<T> gamma, beta, running_mean, running_var;
};

template <typename T>
struct BlockResult {
    Tensor<T> output;                  // y = x_0 + sum_i w_i s_i
    std::vector<HaltingTrace> traces;  // one per sample
    Tensor<T> ponder;                  // [B]; N + R with gradient flowing through R
};

// One iterative block: entry projection to the block width, a weight-shared
// three-conv bottleneck applied up to max_iterations times with separate
// batchnorm statistics per iteration, and the halting head that turns the
// iterations' states into a weighted output.
template <typename T>
class IterativeBlock {
public:
    IterativeBlock(BlockConfig cfg, int in_channels, uint64_t seed, const std::string& prefix);

    void register_params(ParamStore<T>& store) const;

    BlockResult<T> forward(const Tensor<T>& x_in, Mode mode);

    // sigmoid(fc3(act(fc2(act(fc1(gap(concat(s_prev, x0, f)))))))), shape [B].
    Tensor<T> act_score(const Tensor<T>& s_prev, const Tensor<T>& x0, const Tensor<T>& f) const;

    BlockConfig cfg;
    int in_channels;
    std::string prefix;

    Tensor<T> entry_weight;  // [C, Cin, 1, 1]
    BNSet<T> entry_bn;
    // One copy of the processing-block weights, reused by every iteration.
    Tensor<T> f_conv1;  // [c, 2C, 1, 1]
    Tensor<T> f_conv2;  // [c, c, 3, 3]
    Tensor<T> f_conv3;  // [C, c, 1, 1]
    // Independent statistics (and affine) per iteration, 3 per iteration.
    std::vector<std::array<BNSet<T>, 3>> iter_bn;
    Tensor<T> act_w1, act_b1, act_w2, act_b2, act_w3, act_b3;

private:
    Tensor<T> processing_block(const Tensor<T>& x_i, int iter_index, Mode mode,
                               const std::vector<uint8_t>* mask);
    Tensor<T> act_hidden_activation(const Tensor<T>& x) const;
};

extern template class IterativeBlock<float>;
extern template class IterativeBlock<double>;

}  // namespace iamnn
