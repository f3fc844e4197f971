#include "iamnn/network.hpp"

#include <cmath>
#include <sstream>

namespace iamnn {

void NetConfig::validate() const {
    if (blocks.empty()) throw ConfigError("config: at least one block is required");
    if (input_channels < 1 || input_size < 1) {
        throw ConfigError("config: input shape must be positive");
    }
    if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
    if (stem.kernel < 1 || stem.stride < 1 || stem.out_channels < 1) {
        throw ConfigError("config: invalid stem");
    }
    if (act_tau < 0.0) throw ConfigError("config: act_tau must be >= 0");
    for (const auto& b : blocks) {
        if (b.channels < 1 || b.bottleneck_channels < 1 || b.max_iterations < 1 || b.act_hidden < 1) {
            throw ConfigError("config: block sizes must be >= 1");
        }
        if (!(b.act_epsilon > 0.0 && b.act_epsilon < 1.0)) {
            throw ConfigError("config: act_epsilon must be in (0,1)");
        }
    }
    block_spatial_sizes();  // throws on spatial underflow
}

std::vector<int> NetConfig::block_spatial_sizes() const {
    const int pad = stem.kernel / 2;
    int s = (input_size + 2 * pad - stem.kernel) / stem.stride + 1;
    if (s < 1) throw ConfigError("config: stem reduces spatial size below 1");
    if (stem.use_maxpool) {
        if (s < 2) throw ConfigError("config: stem maxpool on a " + std::to_string(s) + "x" +
                                     std::to_string(s) + " map");
        s = (s + 2 - 3) / 2 + 1;
    }
    std::vector<int> sizes;
    for (size_t i = 0; i < blocks.size(); ++i) {
        sizes.push_back(s);
        if (i + 1 < blocks.size()) {
            if (s < 2) {
                throw ConfigError("config: inter-block maxpool on a " + std::to_string(s) + "x" +
                                  std::to_string(s) + " map after block " + std::to_string(i + 1));
            }
            s = (s - 2) / 2 + 1;
        }
    }
    sizes.push_back(s);  // spatial size entering the classifier
    return sizes;
}

std::string NetConfig::canonical() const {
    std::ostringstream os;
    os << "v1;in=" << input_channels << "x" << input_size << ";classes=" << num_classes
       << ";stem=" << stem.kernel << "/" << stem.stride << "/" << stem.out_channels << "/"
       << (stem.use_maxpool ? 1 : 0) << ";tau=" << act_tau << ";blocks=";
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (i) os << ",";
        os << b.channels << ":" << b.bottleneck_channels << ":" << b.max_iterations << ":"
           << b.act_hidden << ":" << b.act_epsilon << ":" << static_cast<int>(b.act_activation);
    }
    return os.str();
}

NetConfig desk_config() {
    NetConfig cfg;
    cfg.input_channels = 3;
    cfg.input_size = 32;
    cfg.num_classes = 10;
    cfg.stem = StemConfig{3, 1, 16, false};
    const int channels[4] = {16, 32, 32, 64};
    for (int c : channels) {
        BlockConfig b;
        b.channels = c;
        b.bottleneck_channels = std::max(1, c / 4);
        b.max_iterations = 2;
        b.act_hidden = 16;
        cfg.blocks.push_back(b);
    }
    return cfg;
}

NetConfig imagenet_config() {
    NetConfig cfg;
    cfg.input_channels = 3;
    cfg.input_size = 224;
    cfg.num_classes = 1000;
    cfg.stem = StemConfig{7, 2, 64, true};
    const int channels[4] = {352, 512, 704, 1024};
    const int iters[4] = {3, 8, 36, 3};  // ResNet152's per-block unit counts
    for (int i = 0; i < 4; ++i) {
        BlockConfig b;
        b.channels = channels[i];
        b.bottleneck_channels = channels[i] / 4;
        b.max_iterations = iters[i];
        b.act_hidden = 64;
        cfg.blocks.push_back(b);
    }
    return cfg;
}

template <typename T>
Network<T>::Network(NetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    {
        Rng rng(mix_seed(seed, "stem.conv.weight"));
        stem_weight = Tensor<T>::zeros(
            {cfg_.stem.out_channels, cfg_.input_channels, cfg_.stem.kernel, cfg_.stem.kernel});
        fill_normal(stem_weight, rng,
                    std::sqrt(2.0 / (cfg_.input_channels * cfg_.stem.kernel * cfg_.stem.kernel)));
    }
    stem_bn.gamma = Tensor<T>::full({cfg_.stem.out_channels}, T(1));
    stem_bn.beta = Tensor<T>::zeros({cfg_.stem.out_channels});
    stem_bn.running_mean = Tensor<T>::zeros({cfg_.stem.out_channels});
    stem_bn.running_var = Tensor<T>::full({cfg_.stem.out_channels}, T(1));

    int in_c = cfg_.stem.out_channels;
    for (size_t i = 0; i < cfg_.blocks.size(); ++i) {
        blocks.emplace_back(cfg_.blocks[i], in_c, seed, "block" + std::to_string(i + 1));
        in_c = cfg_.blocks[i].channels;
    }

    {
        Rng rng(mix_seed(seed, "head.linear.weight"));
        head_weight = Tensor<T>::zeros({cfg_.num_classes, in_c});
        fill_normal(head_weight, rng, std::sqrt(1.0 / in_c));
    }
    head_bias = Tensor<T>::zeros({cfg_.num_classes});

    store_.add("stem.conv.weight", stem_weight, true);
    store_.add("stem.bn.gamma", stem_bn.gamma, true);
    store_.add("stem.bn.beta", stem_bn.beta, true);
    store_.add("stem.bn.running_mean", stem_bn.running_mean, false);
    store_.add("stem.bn.running_var", stem_bn.running_var, false);
    for (const auto& b : blocks) b.register_params(store_);
    store_.add("head.linear.weight", head_weight, true);
    store_.add("head.linear.bias", head_bias, true);
    store_.set_requires_grad(true);
}

template <typename T>
NetResult<T> Network<T>::forward(const Tensor<T>& batch, Mode mode) {
    if (batch.rank() != 4 || batch.dim(1) != cfg_.input_channels || batch.dim(2) != cfg_.input_size ||
        batch.dim(3) != cfg_.input_size) {
        throw ShapeError("net_forward: batch " + shape_str(batch.shape()) + " vs configured input " +
                         std::to_string(cfg_.input_channels) + "x" + std::to_string(cfg_.input_size) +
                         "x" + std::to_string(cfg_.input_size));
    }
    const bool train = mode == Mode::Train;
    Tensor<T> h = ops::conv2d(batch, stem_weight, cfg_.stem.stride, cfg_.stem.kernel / 2);
    h = ops::relu(ops::batchnorm(h, stem_bn.gamma, stem_bn.beta, stem_bn.running_mean,
                                 stem_bn.running_var, train, T(0.1), T(1e-5)));
    if (cfg_.stem.use_maxpool) h = ops::maxpool(h, 3, 2, 1);

    NetResult<T> result;
    for (size_t i = 0; i < blocks.size(); ++i) {
        BlockResult<T> br = blocks[i].forward(h, mode);
        h = br.output;
        result.traces.push_back(std::move(br.traces));
        result.ponder.push_back(std::move(br.ponder));
        if (i + 1 < blocks.size()) h = ops::maxpool2x2(h);
    }
    Tensor<T> pooled = ops::global_avg_pool(h);
    result.logits = ops::linear(pooled, head_weight, head_bias);
    return result;
}

int64_t per_iteration_bn_params(const BlockConfig& block) {
    // Three BN sets per iteration: two on the bottleneck width, one on the
    // block width; gamma and beta each.
    return 2LL * (2 * block.bottleneck_channels + block.channels);
}

ParamCountBreakdown count_params(const NetConfig& cfg) {
    cfg.validate();
    ParamCountBreakdown out;
    out.stem = static_cast<int64_t>(cfg.stem.kernel) * cfg.stem.kernel * cfg.input_channels *
                   cfg.stem.out_channels +
               2LL * cfg.stem.out_channels;
    int64_t in_c = cfg.stem.out_channels;
    for (const auto& b : cfg.blocks) {
        const int64_t c = b.channels, bc = b.bottleneck_channels, a = b.act_hidden;
        out.shared_conv += in_c * c + 2 * c;                  // entry projection + its BN affine
        out.shared_conv += 2 * c * bc + 9 * bc * bc + bc * c; // F conv1/conv2/conv3
        out.per_iter_bn += static_cast<int64_t>(b.max_iterations) * per_iteration_bn_params(b);
        out.act_heads += (3 * c * a + a) + (a * a + a) + (a + 1);
        in_c = c;
    }
    out.head = in_c * cfg.num_classes + cfg.num_classes;
    out.total = out.stem + out.shared_conv + out.per_iter_bn + out.act_heads + out.head;
    return out;
}

namespace {

struct ResNetSpec {
    bool bottleneck;
    int units[4];
};

ResNetSpec resnet_spec(ResNetRef ref) {
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

ResNetRef resnet_ref_from_name(const std::string& name) {
    if (name == "resnet18") return ResNetRef::ResNet18;
    if (name == "resnet101") return ResNetRef::ResNet101;
    if (name == "resnet152") return ResNetRef::ResNet152;
    throw ConfigError("unknown reference network '" + name +
                      "' (expected resnet18, resnet101 or resnet152)");
}

std::string resnet_ref_name(ResNetRef ref) {
    switch (ref) {
        case ResNetRef::ResNet18:
            return "resnet18";
        case ResNetRef::ResNet101:
            return "resnet101";
        case ResNetRef::ResNet152:
        default:
            return "resnet152";
    }
}

int64_t count_params_resnet(ResNetRef ref, int num_classes) {
    const ResNetSpec spec = resnet_spec(ref);
    int64_t total = 49LL * 3 * 64 + 2 * 64;  // 7x7 stem conv + BN affine
    int64_t in_c = 64;
    for (int stage = 0; stage < 4; ++stage) {
        const int64_t w = 64LL << stage;
        const int64_t out_c = spec.bottleneck ? 4 * w : w;
        for (int unit = 0; unit < spec.units[stage]; ++unit) {
            const bool first = unit == 0;
            const int64_t cin = first ? in_c : out_c;
            if (spec.bottleneck) {
                total += cin * w + 9 * w * w + w * out_c;  // 1x1 reduce, 3x3, 1x1 expand
                total += 2 * w + 2 * w + 2 * out_c;        // BN affine per conv
            } else {
                total += 9 * cin * w + 9 * w * w;
                total += 2 * w + 2 * w;
            }
            if (first && (cin != out_c)) {
                total += cin * out_c + 2 * out_c;  // projection shortcut + its BN
            }
        }
        in_c = out_c;
    }
    total += in_c * num_classes + num_classes;
    return total;
}

template class Network<float>;
template class Network<double>;

}  // namespace iamnn
