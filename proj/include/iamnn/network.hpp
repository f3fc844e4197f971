#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iamnn/block.hpp"
#include "iamnn/param_store.hpp"

namespace iamnn {

struct StemConfig {
    int kernel = 3;
    int stride = 1;
    int out_channels = 16;
    bool use_maxpool = false;  // 3x3/2 pool after the stem conv (ImageNet style)
};

struct NetConfig {
    int input_channels = 3;
    int input_size = 32;  // square inputs
    int num_classes = 10;
    StemConfig stem;
    std::vector<BlockConfig> blocks;
    double act_tau = 0.0;  // ponder-loss coefficient

    // Throws ConfigError on empty blocks or spatial underflow (a pool that
    // would act on a 1x1 map); checked at construction, never at forward.
    void validate() const;

    // Spatial sizes entering each block, plus the final pre-pool size.
    std::vector<int> block_spatial_sizes() const;

    // Canonical text form; checkpoints embed it to detect config mismatch.
    std::string canonical() const;
};

// Desk-scale default: 3x3/1 stem, four small blocks, 32x32 inputs.
NetConfig desk_config();
// Analytic ImageNet-scale configuration (224 input, M = [3,8,36,3]); used
// by the counters and the `count` command, never trained here.
NetConfig imagenet_config();

template <typename T>
struct NetResult {
    Tensor<T> logits;                               // [B, num_classes]
    std::vector<std::vector<HaltingTrace>> traces;  // [block][sample]
    std::vector<Tensor<T>> ponder;                  // per block, each [B]
};

template <typename T>
class Network {
public:
    Network(NetConfig cfg, uint64_t seed);

    NetResult<T> forward(const Tensor<T>& batch, Mode mode);

    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    const NetConfig& config() const { return cfg_; }

    Tensor<T> stem_weight;
    BNSet<T> stem_bn;
    std::vector<IterativeBlock<T>> blocks;
    Tensor<T> head_weight, head_bias;

private:
    NetConfig cfg_;
    ParamStore<T> store_;
};

struct ParamCountBreakdown {
    int64_t stem = 0;
    int64_t shared_conv = 0;  // entry projections + F weights (+ their M-independent BN affine)
    int64_t per_iter_bn = 0;  // affine parameters of the per-iteration batchnorm sets
    int64_t act_heads = 0;
    int64_t head = 0;
    int64_t total = 0;
};

// Closed-form trainable-parameter count; equals the trainable scalar count
// of a ParamStore built from the same config.
ParamCountBreakdown count_params(const NetConfig& cfg);

// Per-iteration BN parameter count of one block (the growth per unit of
// max_iterations).
int64_t per_iteration_bn_params(const BlockConfig& block);

enum class ResNetRef { ResNet18, ResNet101, ResNet152 };

ResNetRef resnet_ref_from_name(const std::string& name);
std::string resnet_ref_name(ResNetRef ref);

// Analytic parameter count of the standard reference architecture (conv
// weights, BN affine, classifier weights+bias); nothing is instantiated.
int64_t count_params_resnet(ResNetRef ref, int num_classes = 1000);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace iamnn
