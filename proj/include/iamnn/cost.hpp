#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "iamnn/network.hpp"

namespace iamnn {

// Analytic operation counts.  Units are multiply-accumulate-equivalent ops
// (one conv MAC = 1; batchnorm 2/element, activations 1/element, pooling
// window-size/element), matching the accounting style of the published
// reference-network figures.
struct FlopsBreakdown {
    // N-independent front costs: stem conv/bn/relu/pool, the per-block entry
    // projections, and the inter-block pools.
    double stem = 0.0;
    std::vector<double> block_iter;  // per-iteration processing cost per block
    std::vector<double> block_act;   // per-iteration halting-head cost per block
    double classifier = 0.0;
    std::vector<int> max_iters;

    // Conv-kernel-only MAC components, for the instrumented cross-check.
    double conv_fixed = 0.0;
    std::vector<double> conv_iter;

    double total(std::span<const int> iters) const;
    double total_min() const;  // every block at 1 iteration
    double total_max() const;  // every block at max_iterations
    double conv_total(std::span<const int> iters) const;
};

FlopsBreakdown count_flops(const NetConfig& cfg);

// Same conventions, standard reference architectures (torchvision-style
// v1.5 downsampling).  input_size <= 64 selects the CIFAR stem (3x3 stride
// 1, no stem pool).
double count_flops_resnet(ResNetRef ref, int input_size, int num_classes = 1000);

struct CostReport {
    std::vector<int64_t> ids;
    std::vector<double> per_sample_flops;
    std::vector<std::vector<int>> per_sample_iters;  // [sample][block]
    double min_flops = 0.0, mean_flops = 0.0, max_flops = 0.0;
    // histograms[b][n-1] = number of samples that used n iterations in block b
    std::vector<std::vector<int64_t>> histograms;
    FlopsBreakdown breakdown;
};

// traces indexed [block][sample]; ids optional (defaults to 0..B-1).
CostReport attach_costs(const std::vector<std::vector<HaltingTrace>>& traces, const NetConfig& cfg,
                        std::span<const int64_t> ids = {});

void merge_cost_reports(CostReport& into, const CostReport& other);

// One row per sample: id, per-block N, total flops.
void write_cost_csv(const CostReport& report, std::ostream& os);

std::string cost_summary_json(const CostReport& report);

}  // namespace iamnn
