#include "iamnn/cost.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace iamnn {

double FlopsBreakdown::total(std::span<const int> iters) const {
    if (iters.size() != block_iter.size()) {
        throw ContractError("flops total: " + std::to_string(iters.size()) +
                            " iteration counts for " + std::to_string(block_iter.size()) +
                            " blocks");
    }
    double t = stem + classifier;
    for (size_t b = 0; b < block_iter.size(); ++b) {
        if (iters[b] < 1 || iters[b] > max_iters[b]) {
            throw ContractError("flops total: iteration count " + std::to_string(iters[b]) +
                                " outside [1," + std::to_string(max_iters[b]) + "] for block " +
                                std::to_string(b + 1));
        }
        t += iters[b] * (block_iter[b] + block_act[b]);
    }
    return t;
}

double FlopsBreakdown::total_min() const {
    std::vector<int> ones(block_iter.size(), 1);
    return total(ones);
}

double FlopsBreakdown::total_max() const {
    return total(max_iters);
}

double FlopsBreakdown::conv_total(std::span<const int> iters) const {
    double t = conv_fixed;
    for (size_t b = 0; b < conv_iter.size(); ++b) t += iters[b] * conv_iter[b];
    return t;
}

FlopsBreakdown count_flops(const NetConfig& cfg) {
    cfg.validate();
    FlopsBreakdown out;

    const int pad = cfg.stem.kernel / 2;
    const double p0 = (cfg.input_size + 2 * pad - cfg.stem.kernel) / cfg.stem.stride + 1;
    const double stem_conv = static_cast<double>(cfg.stem.kernel) * cfg.stem.kernel *
                             cfg.input_channels * cfg.stem.out_channels * p0 * p0;
    out.stem += stem_conv + 3.0 * cfg.stem.out_channels * p0 * p0;  // BN (2/el) + ReLU (1/el)
    out.conv_fixed += stem_conv;

    const std::vector<int> sizes = cfg.block_spatial_sizes();
    if (cfg.stem.use_maxpool) {
        const double p1 = sizes[0];
        out.stem += 9.0 * cfg.stem.out_channels * p1 * p1;
    }

    int in_c = cfg.stem.out_channels;
    for (size_t b = 0; b < cfg.blocks.size(); ++b) {
        const auto& blk = cfg.blocks[b];
        const double p = sizes[b];
        const double px = p * p;
        const double c = blk.channels, bc = blk.bottleneck_channels, a = blk.act_hidden;

        const double entry_conv = in_c * c * px;
        out.stem += entry_conv + 3.0 * c * px;  // entry BN + ReLU
        out.conv_fixed += entry_conv;

        const double conv1 = 2.0 * c * bc * px;
        const double conv2 = 9.0 * bc * bc * px;
        const double conv3 = bc * c * px;
        double iter = conv1 + conv2 + conv3;
        iter += 3.0 * bc * px;  // BN + ReLU after conv1
        iter += 3.0 * bc * px;  // BN + ReLU after conv2
        iter += 2.0 * c * px;   // BN after conv3
        iter += c * px;         // state accumulation
        iter += 2.0 * c * px;   // weighted contribution to the output
        out.block_iter.push_back(iter);
        out.conv_iter.push_back(conv1 + conv2 + conv3);

        double act = 3.0 * c * px;                 // global average pool over the concat
        act += 3.0 * c * a + a + a;                // fc1 + activation
        act += a * a + a + a;                      // fc2 + activation
        act += a + 1.0 + 1.0;                      // fc3 + sigmoid
        out.block_act.push_back(act);
        out.max_iters.push_back(blk.max_iterations);

        if (b + 1 < cfg.blocks.size()) {
            const double pn = sizes[b + 1];
            out.stem += 4.0 * c * pn * pn;  // 2x2 maxpool
        }
        in_c = blk.channels;
    }

    const double pl = sizes.back();
    out.classifier = in_c * pl * pl                        // global average pool
                     + static_cast<double>(in_c) * cfg.num_classes + cfg.num_classes;
    return out;
}

namespace {

struct ResNetStageSpec {
    bool bottleneck;
    int units[4];
};

ResNetStageSpec resnet_flops_spec(ResNetRef ref) {
    switch (ref) {
        case ResNetRef::ResNet18:
            return {false, {2, 2, 2, 2}};
        case ResNetRef::ResNet101:
            return {true, {3, 4, 23, 3}};
        case ResNetRef::ResNet152:
        default:
            return {true, {3, 8, 36, 3}};
    }
}

}  // namespace

double count_flops_resnet(ResNetRef ref, int input_size, int num_classes) {
    const ResNetStageSpec spec = resnet_flops_spec(ref);
    double total = 0.0;
    double p;  // spatial size flowing through the stages
    if (input_size > 64) {
        p = (input_size + 6 - 7) / 2 + 1;
        total += 49.0 * 3 * 64 * p * p + 3.0 * 64 * p * p;
        const double pp = (p + 2 - 3) / 2 + 1;
        total += 9.0 * 64 * pp * pp;  // 3x3/2 maxpool
        p = pp;
    } else {
        // CIFAR-style stem: 3x3 stride 1, no pool.
        p = input_size;
        total += 9.0 * 3 * 64 * p * p + 3.0 * 64 * p * p;
    }

    double in_c = 64;
    for (int stage = 0; stage < 4; ++stage) {
        const double w = 64 << stage;
        const double out_c = spec.bottleneck ? 4 * w : w;
        for (int unit = 0; unit < spec.units[stage]; ++unit) {
            const bool first = unit == 0;
            const int stride = (first && stage > 0) ? 2 : 1;
            const double cin = first ? in_c : out_c;
            const double pin = p;
            const double pout = stride == 2 ? std::floor((pin - 1) / 2) + 1 : pin;
            if (spec.bottleneck) {
                // v1.5: the 3x3 carries the stride.
                total += cin * w * pin * pin + 3.0 * w * pin * pin;       // 1x1 reduce + BN/ReLU
                total += 9.0 * w * w * pout * pout + 3.0 * w * pout * pout;  // 3x3 + BN/ReLU
                total += w * out_c * pout * pout + 2.0 * out_c * pout * pout;  // 1x1 expand + BN
            } else {
                total += 9.0 * cin * w * pout * pout + 3.0 * w * pout * pout;
                total += 9.0 * w * w * pout * pout + 2.0 * w * pout * pout;
            }
            if (first && (cin != out_c || stride != 1)) {
                total += cin * out_c * pout * pout + 2.0 * out_c * pout * pout;
            }
            total += 2.0 * out_c * pout * pout;  // residual add + ReLU
            p = pout;
        }
        in_c = out_c;
    }
    total += in_c * p * p;                       // global average pool
    total += in_c * num_classes + num_classes;   // classifier
    return total;
}

CostReport attach_costs(const std::vector<std::vector<HaltingTrace>>& traces, const NetConfig& cfg,
                        std::span<const int64_t> ids) {
    if (traces.size() != cfg.blocks.size()) {
        throw ContractError("attach_costs: " + std::to_string(traces.size()) + " trace lists for " +
                            std::to_string(cfg.blocks.size()) + " blocks");
    }
    const size_t n = traces.empty() ? 0 : traces[0].size();
    for (const auto& t : traces) {
        if (t.size() != n) throw ContractError("attach_costs: ragged trace lists");
    }
    if (!ids.empty() && ids.size() != n) {
        throw ContractError("attach_costs: " + std::to_string(ids.size()) + " ids for " +
                            std::to_string(n) + " samples");
    }

    CostReport report;
    report.breakdown = count_flops(cfg);
    report.histograms.resize(cfg.blocks.size());
    for (size_t b = 0; b < cfg.blocks.size(); ++b) {
        report.histograms[b].assign(static_cast<size_t>(cfg.blocks[b].max_iterations), 0);
    }
    report.per_sample_flops.reserve(n);
    for (size_t s = 0; s < n; ++s) {
        std::vector<int> iters(cfg.blocks.size());
        for (size_t b = 0; b < cfg.blocks.size(); ++b) {
            iters[b] = traces[b][s].n_iters;
            report.histograms[b][static_cast<size_t>(iters[b] - 1)] += 1;
        }
        report.per_sample_flops.push_back(report.breakdown.total(iters));
        report.per_sample_iters.push_back(std::move(iters));
        report.ids.push_back(ids.empty() ? static_cast<int64_t>(s) : ids[s]);
    }
    if (n > 0) {
        double mn = report.per_sample_flops[0], mx = mn, sum = 0.0;
        for (double f : report.per_sample_flops) {
            mn = std::min(mn, f);
            mx = std::max(mx, f);
            sum += f;
        }
        report.min_flops = mn;
        report.max_flops = mx;
        report.mean_flops = sum / static_cast<double>(n);
    }
    return report;
}

void merge_cost_reports(CostReport& into, const CostReport& other) {
    if (into.per_sample_flops.empty()) {
        into = other;
        return;
    }
    if (into.histograms.size() != other.histograms.size()) {
        throw ContractError("merge_cost_reports: block count mismatch");
    }
    into.ids.insert(into.ids.end(), other.ids.begin(), other.ids.end());
    into.per_sample_flops.insert(into.per_sample_flops.end(), other.per_sample_flops.begin(),
                                 other.per_sample_flops.end());
    into.per_sample_iters.insert(into.per_sample_iters.end(), other.per_sample_iters.begin(),
                                 other.per_sample_iters.end());
    for (size_t b = 0; b < into.histograms.size(); ++b) {
        for (size_t k = 0; k < into.histograms[b].size(); ++k) {
            into.histograms[b][k] += other.histograms[b][k];
        }
    }
    double mn = into.per_sample_flops[0], mx = mn, sum = 0.0;
    for (double f : into.per_sample_flops) {
        mn = std::min(mn, f);
        mx = std::max(mx, f);
        sum += f;
    }
    into.min_flops = mn;
    into.max_flops = mx;
    into.mean_flops = sum / static_cast<double>(into.per_sample_flops.size());
}

void write_cost_csv(const CostReport& report, std::ostream& os) {
    os << "id";
    for (size_t b = 0; b < report.histograms.size(); ++b) os << ",iters_block" << (b + 1);
    os << ",flops\n";
    for (size_t s = 0; s < report.per_sample_flops.size(); ++s) {
        os << report.ids[s];
        for (int n : report.per_sample_iters[s]) os << "," << n;
        os << "," << static_cast<int64_t>(report.per_sample_flops[s]) << "\n";
    }
}

std::string cost_summary_json(const CostReport& report) {
    nlohmann::json j;
    j["samples"] = report.per_sample_flops.size();
    j["flops"] = {{"min", report.min_flops}, {"mean", report.mean_flops}, {"max", report.max_flops}};
    nlohmann::json hists = nlohmann::json::array();
    for (size_t b = 0; b < report.histograms.size(); ++b) {
        nlohmann::json h;
        h["block"] = b + 1;
        h["counts"] = report.histograms[b];
        hists.push_back(h);
    }
    j["iteration_histograms"] = hists;
    return j.dump(2);
}

}  // namespace iamnn
