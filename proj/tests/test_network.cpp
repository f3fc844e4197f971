#include "doctest.h"

#include <cmath>

#include "iamnn/cost.hpp"
#include "iamnn/network.hpp"

using namespace iamnn;

namespace {

NetConfig tiny_config() {
    NetConfig cfg;
    cfg.input_channels = 3;
    cfg.input_size = 12;
    cfg.num_classes = 3;
    cfg.stem = StemConfig{3, 1, 6, false};
    for (int c : {6, 8}) {
        BlockConfig b;
        b.channels = c;
        b.bottleneck_channels = 2;
        b.max_iterations = 2;
        b.act_hidden = 8;
        cfg.blocks.push_back(b);
    }
    return cfg;
}

Tensor<float> random_batch(const NetConfig& cfg, int64_t b, uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor<float>::zeros({b, cfg.input_channels, cfg.input_size, cfg.input_size});
    for (auto& v : t.values()) v = static_cast<float>(rng.normal());
    return t;
}

}  // namespace

TEST_CASE("desk config produces logits of shape B x num_classes") {
    NetConfig cfg = desk_config();
    Network<float> net(cfg, 1);
    auto batch = random_batch(cfg, 5, 42);
    auto res = net.forward(batch, Mode::Eval);
    CHECK(res.logits.shape() == std::vector<int64_t>({5, 10}));
    CHECK(res.traces.size() == 4);
    for (const auto& per_block : res.traces) CHECK(per_block.size() == 5);
}

TEST_CASE("saturated ACT biases force one iteration everywhere; eval FLOPs hit the analytic minimum") {
    NetConfig cfg = tiny_config();
    Network<float> net(cfg, 7);
    for (auto& blk : net.blocks) blk.act_b3.values()[0] = 20.0f;
    auto batch = random_batch(cfg, 6, 43);
    auto res = net.forward(batch, Mode::Eval);
    for (const auto& per_block : res.traces) {
        for (const auto& t : per_block) CHECK(t.n_iters == 1);
    }
    CostReport report = attach_costs(res.traces, cfg);
    const double want = count_flops(cfg).total_min();
    CHECK(report.min_flops == doctest::Approx(want).epsilon(1e-12));
    CHECK(report.max_flops == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("fixed seed and fixed batch give bitwise identical logits") {
    NetConfig cfg = tiny_config();
    auto batch = random_batch(cfg, 4, 44);
    Network<float> net_a(cfg, 99);
    Network<float> net_b(cfg, 99);
    auto ra = net_a.forward(batch, Mode::Eval);
    auto rb = net_b.forward(batch, Mode::Eval);
    for (int64_t i = 0; i < ra.logits.numel(); ++i) {
        CHECK(ra.logits.values()[i] == rb.logits.values()[i]);
    }
}

TEST_CASE("logits stay finite over 100 random seeds") {
    NetConfig cfg = tiny_config();
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        Network<float> net(cfg, seed);
        auto batch = random_batch(cfg, 2, seed * 13 + 1);
        auto res = net.forward(batch, Mode::Eval);
        CHECK(ops::all_finite(res.logits));
    }
}

TEST_CASE("count_params: a 3x3 conv with 2 in and 4 out channels is 72 weights") {
    NetConfig cfg = tiny_config();
    cfg.input_channels = 2;
    cfg.stem = StemConfig{3, 1, 4, false};
    auto breakdown = count_params(cfg);
    CHECK(breakdown.stem == 72 + 2 * 4);  // conv weights + BN affine
}

TEST_CASE("count_params: ImageNet-scale configuration lands in the published band") {
    auto breakdown = count_params(imagenet_config());
    CHECK(breakdown.total >= 4'000'000);
    CHECK(breakdown.total <= 6'000'000);
}

TEST_CASE("raising one block's max_iterations grows the count by its per-iteration BN size") {
    NetConfig cfg = tiny_config();
    const int64_t before = count_params(cfg).total;
    NetConfig more = cfg;
    more.blocks[1].max_iterations += 1;
    const int64_t after = count_params(more).total;
    CHECK(after - before == per_iteration_bn_params(cfg.blocks[1]));
    CHECK(count_params(cfg).shared_conv == count_params(more).shared_conv);
}

TEST_CASE("shared_conv is invariant under any max_iterations change") {
    NetConfig a = imagenet_config();
    NetConfig b = a;
    for (auto& blk : b.blocks) blk.max_iterations = 1;
    CHECK(count_params(a).shared_conv == count_params(b).shared_conv);
    CHECK(count_params(a).stem == count_params(b).stem);
    CHECK(count_params(a).head == count_params(b).head);
    CHECK(count_params(a).act_heads == count_params(b).act_heads);
}

TEST_CASE("reference parameter counts match the published architectures") {
    CHECK(count_params_resnet(ResNetRef::ResNet152) == 60'192'808);
    CHECK(count_params_resnet(ResNetRef::ResNet101) == 44'549'160);
    CHECK(count_params_resnet(ResNetRef::ResNet18) == 11'689'512);

    // Bands used by the comparison claims.
    CHECK(count_params_resnet(ResNetRef::ResNet152) >= 60.2e6 * 0.95);
    CHECK(count_params_resnet(ResNetRef::ResNet152) <= 60.2e6 * 1.05);
    CHECK(count_params_resnet(ResNetRef::ResNet18) >= 12e6 * 0.95);
    CHECK(count_params_resnet(ResNetRef::ResNet18) <= 12e6 * 1.05);
    // The 42M figure is the 10-class variant of ResNet101.
    CHECK(count_params_resnet(ResNetRef::ResNet101, 10) >= 42e6 * 0.95);
    CHECK(count_params_resnet(ResNetRef::ResNet101, 10) <= 42e6 * 1.05);
}

TEST_CASE("parameter reduction versus ResNet152 clears 88 percent") {
    const double ours = static_cast<double>(count_params(imagenet_config()).total);
    const double ref = static_cast<double>(count_params_resnet(ResNetRef::ResNet152));
    CHECK(ours / ref <= 0.12);
}

TEST_CASE("count_params agrees exactly with a constructed ParamStore on 20 random configs") {
    Rng rng(555);
    int built = 0;
    while (built < 20) {
        NetConfig cfg;
        cfg.input_channels = 1 + static_cast<int>(rng.next_u64() % 3);
        cfg.input_size = 12 + 4 * static_cast<int>(rng.next_u64() % 4);
        cfg.num_classes = 2 + static_cast<int>(rng.next_u64() % 8);
        cfg.stem = StemConfig{static_cast<int>(rng.next_u64() % 2) ? 3 : 5,
                              1 + static_cast<int>(rng.next_u64() % 2),
                              2 + static_cast<int>(rng.next_u64() % 6),
                              (rng.next_u64() % 2) == 0};
        const int nblocks = 1 + static_cast<int>(rng.next_u64() % 4);
        for (int i = 0; i < nblocks; ++i) {
            BlockConfig b;
            b.channels = 2 + static_cast<int>(rng.next_u64() % 10);
            b.bottleneck_channels = 1 + static_cast<int>(rng.next_u64() % b.channels);
            b.max_iterations = 1 + static_cast<int>(rng.next_u64() % 4);
            b.act_hidden = 2 + static_cast<int>(rng.next_u64() % 12);
            cfg.blocks.push_back(b);
        }
        try {
            cfg.validate();
        } catch (const ConfigError&) {
            continue;  // spatially invalid draw, resample
        }
        Network<float> net(cfg, rng.next_u64());
        CHECK(net.params().trainable_scalar_count() == count_params(cfg).total);
        ++built;
    }
}

TEST_CASE("pooling below 1x1 is rejected at construction time") {
    NetConfig cfg = tiny_config();
    cfg.input_size = 4;  // 4 -> pool 2 -> pool 1 -> a third pool would act on 1x1
    cfg.blocks.push_back(cfg.blocks.back());
    cfg.blocks.push_back(cfg.blocks.back());
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(Network<float>(cfg, 1), ConfigError);

    NetConfig ok = tiny_config();
    ok.input_size = 4;
    CHECK_NOTHROW(Network<float>(ok, 1));  // one pool: 4 -> 2 -> classifier
}

TEST_CASE("forward rejects batches that do not match the configured input shape") {
    NetConfig cfg = tiny_config();
    Network<float> net(cfg, 3);
    auto bad = Tensor<float>::zeros({2, cfg.input_channels, 7, 7});
    CHECK_THROWS_AS(net.forward(bad, Mode::Eval), ShapeError);
}

TEST_CASE("parameter names follow the documented scheme") {
    NetConfig cfg = tiny_config();
    Network<float> net(cfg, 3);
    CHECK(net.params().contains("stem.conv.weight"));
    CHECK(net.params().contains("block1.F.conv2.weight"));
    CHECK(net.params().contains("block2.bn.iter2.conv3.gamma"));
    CHECK(net.params().contains("block1.act.fc3.bias"));
    CHECK(net.params().contains("head.linear.weight"));
}
