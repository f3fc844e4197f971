#include "doctest.h"

#include <cmath>
#include <functional>

#include "iamnn/init.hpp"
#include "iamnn/ops.hpp"
#include "test_util.hpp"

using namespace iamnn;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.normal() * scale;
    return t;
}

// Central finite differences against the recorded backward pass.  Passes
// when the relative error is below tol or both sides are at the noise floor.
void check_param_grads(Tensor<double> param, const std::function<Tensor<double>()>& loss_fn,
                       double tol = 1e-6, double h = 1e-6) {
    param.drop_grad();
    {
        Graph<double> tape;
        Tensor<double> loss = loss_fn();
        tape.backward(loss);
    }
    std::vector<double> analytic(param.grad().begin(), param.grad().end());
    param.drop_grad();
    for (int64_t i = 0; i < param.numel(); ++i) {
        const double keep = param.values()[i];
        param.values()[i] = keep + h;
        const double lp = loss_fn().scalar();
        param.values()[i] = keep - h;
        const double lm = loss_fn().scalar();
        param.values()[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        const double a = analytic[static_cast<size_t>(i)];
        const double scale = std::max(std::fabs(a), std::fabs(fd));
        const bool ok = (scale < 1e-8) || (std::fabs(a - fd) / scale < tol) ||
                        std::fabs(a - fd) < 1e-9;
        if (!ok) {
            CAPTURE(i);
            CAPTURE(a);
            CAPTURE(fd);
        }
        CHECK(ok);
    }
}

// Projects a tensor to a scalar with a fixed random weighting so every
// output element influences the loss.
Tensor<double> project(Tensor<double> t, const Tensor<double>& weights) {
    return ops::affine(ops::mean_all(ops::mul(t, weights)), static_cast<double>(t.numel()), 0.0);
}

}  // namespace

TEST_CASE("grad of sum(w * x) with x fixed is exactly x") {
    auto w = Tensor<float>::from({2, 3}, {0.5f, -1.0f, 2.0f, 0.0f, 3.0f, -2.5f});
    auto x = Tensor<float>::from({2, 3}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f});
    w.set_requires_grad(true);
    Graph<float> tape;
    auto loss = ops::affine(ops::mean_all(ops::mul(w, x)), 6.0f, 0.0f);
    tape.backward(loss);
    for (int64_t i = 0; i < w.numel(); ++i) {
        CHECK(w.grad()[i] == x.values()[i]);
    }
}

TEST_CASE("a weight used twice accumulates both path gradients: a + b") {
    auto w = Tensor<double>::scalar_tensor(1.5);
    w.set_requires_grad(true);
    const double a = 3.0, b = -7.0;
    Graph<double> tape;
    auto loss = ops::add(ops::affine(w, a, 0.0), ops::affine(w, b, 0.0));
    tape.backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(a + b).epsilon(1e-12));
}

TEST_CASE("backward on a non-scalar tensor raises a rank error") {
    auto x = Tensor<float>::zeros({2, 2});
    x.set_requires_grad(true);
    Graph<float> tape;
    auto y = ops::relu(x);
    CHECK_THROWS_AS(tape.backward(y), RankError);
}

TEST_CASE("tensors off every path to the loss keep no gradient") {
    auto x = Tensor<float>::full({2}, 1.0f);
    auto w = Tensor<float>::full({2}, 2.0f);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    Graph<float> tape;
    auto unused = ops::relu(x);
    auto loss = ops::mean_all(ops::relu(w));
    tape.backward(loss);
    CHECK_FALSE(x.has_grad());
    CHECK(w.has_grad());
    (void)unused;
}

TEST_CASE("recorded entries are in topological order and replay once") {
    auto x = Tensor<float>::full({2}, 1.0f);
    x.set_requires_grad(true);
    Graph<float> tape;
    auto a = ops::relu(x);
    auto b = ops::sigmoid(a);
    auto loss = ops::mean_all(ops::mul(a, b));
    for (const auto& e : tape.entries()) {
        for (uint64_t in_id : e.input_ids) {
            CHECK(in_id < e.output_id);
        }
    }
    CHECK(tape.size() == 4);
    tape.backward(loss);
    CHECK(tape.size() == 0);  // tape freed after one reverse replay
}

TEST_CASE("finite-difference check: relu") {
    Rng rng(21);
    auto x = randn({2, 3}, rng);
    for (auto& v : x.values()) {
        if (std::fabs(v) < 0.05) v += 0.1;  // keep away from the kink
    }
    auto proj = randn({2, 3}, rng);
    x.set_requires_grad(true);
    check_param_grads(x, [&]() { return project(ops::relu(x), proj); });
}

TEST_CASE("finite-difference check: sigmoid and tanh") {
    Rng rng(22);
    auto x = randn({2, 3}, rng);
    auto proj = randn({2, 3}, rng);
    x.set_requires_grad(true);
    check_param_grads(x, [&]() { return project(ops::sigmoid(x), proj); });
    check_param_grads(x, [&]() { return project(ops::tanh_op(x), proj); });
}

TEST_CASE("finite-difference check: add, mul, affine, reshape") {
    Rng rng(23);
    auto x = randn({4}, rng);
    auto y = randn({4}, rng);
    auto proj = randn({4}, rng);
    auto proj2 = randn({2, 2}, rng);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    check_param_grads(x, [&]() { return project(ops::add(x, y), proj); });
    check_param_grads(y, [&]() { return project(ops::mul(x, y), proj); });
    check_param_grads(x, [&]() { return project(ops::affine(x, -2.5, 1.0), proj); });
    check_param_grads(x, [&]() { return project(ops::reshape(x, {2, 2}), proj2); });
}

TEST_CASE("finite-difference check: conv2d input and weight") {
    Rng rng(24);
    auto x = randn({2, 2, 5, 5}, rng);
    auto w = randn({3, 2, 3, 3}, rng, 0.5);
    auto proj = randn({2, 3, 3, 3}, rng);  // conv output 5-3+1=3 with pad 0
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    check_param_grads(x, [&]() { return project(ops::conv2d(x, w, 1, 0), proj); });
    check_param_grads(w, [&]() { return project(ops::conv2d(x, w, 1, 0), proj); });

    auto proj2 = randn({2, 3, 3, 3}, rng);  // stride 2, pad 1: (5+2-3)/2+1 = 3
    check_param_grads(w, [&]() { return project(ops::conv2d(x, w, 2, 1), proj2); });
}

TEST_CASE("finite-difference check: maxpool and global_avg_pool") {
    Rng rng(25);
    auto x = randn({2, 2, 4, 4}, rng);
    auto proj = randn({2, 2, 2, 2}, rng);
    auto proj_gap = randn({2, 2}, rng);
    x.set_requires_grad(true);
    check_param_grads(x, [&]() { return project(ops::maxpool2x2(x), proj); }, 1e-6, 1e-7);
    check_param_grads(x, [&]() { return project(ops::global_avg_pool(x), proj_gap); });
}

TEST_CASE("finite-difference check: linear") {
    Rng rng(26);
    auto x = randn({3, 4}, rng);
    auto w = randn({2, 4}, rng);
    auto b = randn({2}, rng);
    auto proj = randn({3, 2}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    check_param_grads(x, [&]() { return project(ops::linear(x, w, b), proj); });
    check_param_grads(w, [&]() { return project(ops::linear(x, w, b), proj); });
    check_param_grads(b, [&]() { return project(ops::linear(x, w, b), proj); });
}

TEST_CASE("finite-difference check: softmax_cross_entropy") {
    Rng rng(27);
    auto logits = randn({3, 5}, rng);
    const std::vector<int> labels = {0, 3, 4};
    logits.set_requires_grad(true);
    check_param_grads(logits, [&]() {
        return ops::softmax_cross_entropy(logits, std::span<const int>(labels));
    });
}

TEST_CASE("finite-difference check: concat_channels and per_sample_scale") {
    Rng rng(28);
    auto a = randn({2, 2, 3, 3}, rng);
    auto b = randn({2, 1, 3, 3}, rng);
    auto proj = randn({2, 3, 3, 3}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    check_param_grads(a, [&]() { return project(ops::concat_channels(a, b), proj); });
    check_param_grads(b, [&]() { return project(ops::concat_channels(a, b), proj); });

    auto w = randn({2}, rng);
    auto proj2 = randn({2, 2, 3, 3}, rng);
    w.set_requires_grad(true);
    check_param_grads(a, [&]() { return project(ops::per_sample_scale(a, w), proj2); });
    check_param_grads(w, [&]() { return project(ops::per_sample_scale(a, w), proj2); });
}

TEST_CASE("finite-difference check: batchnorm train, eval and masked") {
    Rng rng(29);
    auto x = randn({3, 2, 3, 3}, rng);
    auto gamma = Tensor<double>::from({2}, {1.3, 0.7});
    auto beta = Tensor<double>::from({2}, {0.1, -0.2});
    auto proj = randn({3, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);

    SUBCASE("train mode, full batch") {
        auto run = [&]() {
            auto rm = Tensor<double>::zeros({2});
            auto rv = Tensor<double>::full({2}, 1.0);
            return project(ops::batchnorm(x, gamma, beta, rm, rv, true, 0.1, 1e-5), proj);
        };
        check_param_grads(x, run, 1e-5);
        check_param_grads(gamma, run, 1e-5);
        check_param_grads(beta, run, 1e-5);
    }
    SUBCASE("train mode, masked statistics") {
        const std::vector<uint8_t> mask = {1, 0, 1};
        auto run = [&]() {
            auto rm = Tensor<double>::zeros({2});
            auto rv = Tensor<double>::full({2}, 1.0);
            return project(ops::batchnorm(x, gamma, beta, rm, rv, true, 0.1, 1e-5, &mask), proj);
        };
        check_param_grads(x, run, 1e-5);
        check_param_grads(gamma, run, 1e-5);
    }
    SUBCASE("eval mode") {
        auto rm = Tensor<double>::from({2}, {0.2, -0.1});
        auto rv = Tensor<double>::from({2}, {1.5, 0.8});
        auto run = [&]() {
            return project(ops::batchnorm(x, gamma, beta, rm, rv, false, 0.1, 1e-5), proj);
        };
        check_param_grads(x, run);
        check_param_grads(gamma, run);
        check_param_grads(beta, run);
    }
}

TEST_CASE("finite-difference check: a small composite network") {
    Rng rng(30);
    auto x = randn({2, 2, 6, 6}, rng);
    auto w1 = randn({4, 2, 3, 3}, rng, 0.5);
    auto wl = randn({3, 4}, rng);
    auto bl = Tensor<double>::zeros({3});
    const std::vector<int> labels = {1, 2};
    w1.set_requires_grad(true);
    wl.set_requires_grad(true);
    bl.set_requires_grad(true);
    auto run = [&]() {
        auto h = ops::relu(ops::conv2d(x, w1, 1, 1));
        h = ops::maxpool2x2(h);
        auto v = ops::global_avg_pool(h);
        auto logits = ops::linear(v, wl, bl);
        return ops::softmax_cross_entropy(logits, std::span<const int>(labels));
    };
    check_param_grads(w1, run, 1e-5);
    check_param_grads(wl, run, 1e-5);
    check_param_grads(bl, run, 1e-5);
}
