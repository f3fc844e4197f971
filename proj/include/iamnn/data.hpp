#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iamnn/tensor.hpp"

namespace iamnn {

// Images are stored normalized to per-channel zero mean / unit variance;
// the normalization constants are kept so raw pixels can be reconstructed.
struct Dataset {
    Tensor<float> images;  // [N, C, H, W]
    std::vector<int> labels;
    std::vector<int64_t> ids;
    std::vector<double> noise;  // per-sample noise level (synthetic sets; else empty)
    std::vector<double> channel_mean, channel_std;
    int num_classes = 0;

    int64_t size() const { return images.defined() ? images.dim(0) : 0; }
};

enum class CifarVariant { Cifar10, Cifar100 };

// One binary batch file of the public distribution: cifar10 records are
// 1 label byte + 3072 pixels (R,G,B planes, row-major); cifar100 records
// carry a coarse and a fine label byte, the fine label is used.
Dataset load_cifar_file(const std::string& path, CifarVariant variant);

// data_batch_*.bin / train.bin when train, else test_batch.bin / test.bin.
Dataset load_cifar_dir(const std::string& dir, CifarVariant variant, bool train);

struct SyntheticSpec {
    int num_classes = 5;
    int image_size = 16;
    int samples_per_class = 100;
    // Cycled over the samples of each class; {0.0, 0.6} gives half clean,
    // half noisy.  A single entry applies to every sample.
    std::vector<double> noise_levels = {0.0};
    uint64_t seed = 1;
};

// Class-conditional geometric patterns plus additive uniform noise scaled by
// the sample's noise level; bitwise deterministic given the seed.
Dataset gen_synthetic(const SyntheticSpec& spec);

// Writes the dataset in the cifar10 record layout (denormalized to bytes).
void export_cifar_layout(const Dataset& data, const std::string& path);

// Deterministic permutation from the seed; the final partial batch is kept.
std::vector<std::vector<int64_t>> batches(int64_t dataset_size, int64_t batch_size, uint64_t seed);

struct Batch {
    std::vector<int> labels;
    std::vector<int64_t> ids;
};

template <typename T>
Batch gather_batch(const Dataset& data, std::span<const int64_t> indices, Tensor<T>& out_images);

}  // namespace iamnn
