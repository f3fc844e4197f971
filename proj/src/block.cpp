#include "iamnn/block.hpp"

#include <cmath>

namespace iamnn {

HaltingTrace halting_rule(std::span<const double> scores, int max_iterations, double epsilon) {
    if (scores.empty()) throw ContractError("halting_rule: empty score stream");
    if (max_iterations < 1) throw ContractError("halting_rule: max_iterations < 1");
    HaltingTrace trace;
    double cum = 0.0;
    const double threshold = 1.0 - epsilon;
    for (int i = 1; i <= max_iterations; ++i) {
        if (static_cast<size_t>(i) > scores.size()) {
            throw ContractError("halting_rule: stream ended after " +
                                std::to_string(scores.size()) + " scores without halting");
        }
        const double h = scores[static_cast<size_t>(i - 1)];
        trace.raw_scores.push_back(h);
        if (cum + h >= threshold || i == max_iterations) {
            trace.n_iters = i;
            trace.remainder = 1.0 - cum;
            trace.weights.push_back(trace.remainder);
            break;
        }
        trace.weights.push_back(h);
        cum += h;
    }
    trace.ponder = trace.n_iters + trace.remainder;
    return trace;
}

namespace {

template <typename T>
BNSet<T> make_bn(int channels) {
    BNSet<T> bn;
    bn.gamma = Tensor<T>::full({channels}, T(1));
    bn.beta = Tensor<T>::zeros({channels});
    bn.running_mean = Tensor<T>::zeros({channels});
    bn.running_var = Tensor<T>::full({channels}, T(1));
    return bn;
}

template <typename T>
Tensor<T> seeded_normal(std::vector<int64_t> shape, uint64_t seed, const std::string& name,
                        double stddev) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    Rng rng(mix_seed(seed, name));
    fill_normal(t, rng, stddev);
    return t;
}

template <typename T>
void register_bn(ParamStore<T>& store, const std::string& prefix, const BNSet<T>& bn) {
    store.add(prefix + ".gamma", bn.gamma, true);
    store.add(prefix + ".beta", bn.beta, true);
    store.add(prefix + ".running_mean", bn.running_mean, false);
    store.add(prefix + ".running_var", bn.running_var, false);
}

}  // namespace

template <typename T>
IterativeBlock<T>::IterativeBlock(BlockConfig cfg_in, int in_channels_in, uint64_t seed,
                                  const std::string& prefix_in)
    : cfg(cfg_in), in_channels(in_channels_in), prefix(prefix_in) {
    if (cfg.max_iterations < 1 || cfg.channels < 1 || cfg.bottleneck_channels < 1) {
        throw ConfigError("block " + prefix + ": channels, bottleneck and max_iterations must be >= 1");
    }
    if (!(cfg.act_epsilon > 0.0 && cfg.act_epsilon < 1.0)) {
        throw ConfigError("block " + prefix + ": act_epsilon must be in (0,1)");
    }
    const int c = cfg.channels;
    const int bc = cfg.bottleneck_channels;
    const int a = cfg.act_hidden;

    entry_weight = seeded_normal<T>({c, in_channels, 1, 1}, seed, prefix + ".entry.conv.weight",
                                    std::sqrt(2.0 / in_channels));
    entry_bn = make_bn<T>(c);

    f_conv1 = seeded_normal<T>({bc, 2 * c, 1, 1}, seed, prefix + ".F.conv1.weight",
                               std::sqrt(2.0 / (2.0 * c)));
    f_conv2 = seeded_normal<T>({bc, bc, 3, 3}, seed, prefix + ".F.conv2.weight",
                               std::sqrt(2.0 / (9.0 * bc)));
    f_conv3 = seeded_normal<T>({c, bc, 1, 1}, seed, prefix + ".F.conv3.weight",
                               std::sqrt(2.0 / bc));

    iter_bn.reserve(static_cast<size_t>(cfg.max_iterations));
    for (int k = 0; k < cfg.max_iterations; ++k) {
        iter_bn.push_back({make_bn<T>(bc), make_bn<T>(bc), make_bn<T>(c)});
    }

    act_w1 = seeded_normal<T>({a, 3 * c}, seed, prefix + ".act.fc1.weight",
                              std::sqrt(2.0 / (3.0 * c)));
    act_b1 = Tensor<T>::zeros({a});
    act_w2 = seeded_normal<T>({a, a}, seed, prefix + ".act.fc2.weight", std::sqrt(2.0 / a));
    act_b2 = Tensor<T>::zeros({a});
    act_w3 = seeded_normal<T>({1, a}, seed, prefix + ".act.fc3.weight", std::sqrt(1.0 / a));
    act_b3 = Tensor<T>::zeros({1});
}

template <typename T>
void IterativeBlock<T>::register_params(ParamStore<T>& store) const {
    store.add(prefix + ".entry.conv.weight", entry_weight, true);
    register_bn(store, prefix + ".entry.bn", entry_bn);
    store.add(prefix + ".F.conv1.weight", f_conv1, true);
    store.add(prefix + ".F.conv2.weight", f_conv2, true);
    store.add(prefix + ".F.conv3.weight", f_conv3, true);
    for (int k = 0; k < cfg.max_iterations; ++k) {
        for (int j = 0; j < 3; ++j) {
            register_bn(store,
                        prefix + ".bn.iter" + std::to_string(k + 1) + ".conv" + std::to_string(j + 1),
                        iter_bn[static_cast<size_t>(k)][static_cast<size_t>(j)]);
        }
    }
    store.add(prefix + ".act.fc1.weight", act_w1, true);
    store.add(prefix + ".act.fc1.bias", act_b1, true);
    store.add(prefix + ".act.fc2.weight", act_w2, true);
    store.add(prefix + ".act.fc2.bias", act_b2, true);
    store.add(prefix + ".act.fc3.weight", act_w3, true);
    store.add(prefix + ".act.fc3.bias", act_b3, true);
}

template <typename T>
Tensor<T> IterativeBlock<T>::act_hidden_activation(const Tensor<T>& x) const {
    switch (cfg.act_activation) {
        case ActActivation::Tanh:
            return ops::tanh_op(x);
        case ActActivation::Sigmoid:
            return ops::sigmoid(x);
        case ActActivation::Relu:
        default:
            return ops::relu(x);
    }
}

template <typename T>
Tensor<T> IterativeBlock<T>::act_score(const Tensor<T>& s_prev, const Tensor<T>& x0,
                                       const Tensor<T>& f) const {
    Tensor<T> v = ops::global_avg_pool(ops::concat_channels(s_prev, x0, f));
    Tensor<T> h = act_hidden_activation(ops::linear(v, act_w1, act_b1));
    h = act_hidden_activation(ops::linear(h, act_w2, act_b2));
    Tensor<T> score = ops::sigmoid(ops::linear(h, act_w3, act_b3));  // [B,1]
    return ops::reshape(score, {score.dim(0)});
}

template <typename T>
Tensor<T> IterativeBlock<T>::processing_block(const Tensor<T>& x_i, int iter_index, Mode mode,
                                              const std::vector<uint8_t>* mask) {
    const bool train = mode == Mode::Train;
    const T momentum = T(0.1);
    const T eps = T(1e-5);
    auto& bn = iter_bn[static_cast<size_t>(iter_index)];
    Tensor<T> h = ops::conv2d(x_i, f_conv1, 1, 0);
    h = ops::relu(ops::batchnorm(h, bn[0].gamma, bn[0].beta, bn[0].running_mean, bn[0].running_var,
                                 train, momentum, eps, mask));
    h = ops::conv2d(h, f_conv2, 1, 1);
    h = ops::relu(ops::batchnorm(h, bn[1].gamma, bn[1].beta, bn[1].running_mean, bn[1].running_var,
                                 train, momentum, eps, mask));
    h = ops::conv2d(h, f_conv3, 1, 0);
    // State increments stay signed: batchnorm but no ReLU on the expansion conv.
    return ops::batchnorm(h, bn[2].gamma, bn[2].beta, bn[2].running_mean, bn[2].running_var, train,
                          momentum, eps, mask);
}

template <typename T>
BlockResult<T> IterativeBlock<T>::forward(const Tensor<T>& x_in, Mode mode) {
    if (x_in.rank() != 4 || x_in.dim(1) != in_channels) {
        throw ShapeError("block " + prefix + ": input " + shape_str(x_in.shape()) +
                         " vs entry projection expecting " + std::to_string(in_channels) +
                         " channels");
    }
    const bool train = mode == Mode::Train;
    const int64_t batch = x_in.dim(0);
    const T momentum = T(0.1);
    const T eps = T(1e-5);

    Tensor<T> x0 = ops::conv2d(x_in, entry_weight, 1, 0);
    x0 = ops::relu(ops::batchnorm(x0, entry_bn.gamma, entry_bn.beta, entry_bn.running_mean,
                                  entry_bn.running_var, train, momentum, eps));

    Tensor<T> state = Tensor<T>::zeros(x0.shape());  // s_0 = 0
    Tensor<T> y = x0;
    Tensor<T> cum = Tensor<T>::zeros({batch});
    Tensor<T> remainder_sum = Tensor<T>::zeros({batch});

    std::vector<uint8_t> alive(static_cast<size_t>(batch), 1);
    std::vector<double> cum_values(static_cast<size_t>(batch), 0.0);
    std::vector<HaltingTrace> traces(static_cast<size_t>(batch));
    const double threshold = 1.0 - cfg.act_epsilon;

    for (int i = 1; i <= cfg.max_iterations; ++i) {
        Tensor<T> x_i = ops::concat_channels(x0, state);
        Tensor<T> f = processing_block(x_i, i - 1, mode, train ? &alive : nullptr);
        Tensor<T> h = act_score(state, x0, f);
        if (!ops::all_finite(h) || !ops::all_finite(f)) {
            throw NumericError("block " + prefix + ": non-finite activation", i);
        }

        auto hv = h.values();
        std::vector<T> cont_mask(static_cast<size_t>(batch), T(0));
        std::vector<T> halt_mask(static_cast<size_t>(batch), T(0));
        bool any_alive_next = false;
        for (int64_t b = 0; b < batch; ++b) {
            const size_t bi = static_cast<size_t>(b);
            if (!alive[bi]) continue;
            const double score = static_cast<double>(hv[b]);
            traces[bi].raw_scores.push_back(score);
            const bool halts = (cum_values[bi] + score >= threshold) || (i == cfg.max_iterations);
            if (halts) {
                halt_mask[bi] = T(1);
                traces[bi].n_iters = i;
                traces[bi].remainder = 1.0 - cum_values[bi];
                traces[bi].weights.push_back(traces[bi].remainder);
            } else {
                cont_mask[bi] = T(1);
                traces[bi].weights.push_back(score);
                any_alive_next = true;
            }
        }
        Tensor<T> cont_t = Tensor<T>::from({batch}, std::move(cont_mask));
        Tensor<T> halt_t = Tensor<T>::from({batch}, std::move(halt_mask));

        // w_i = h_i while the sample keeps going, and the remainder
        // 1 - sum_{j<i} h_j at the iteration it halts.
        Tensor<T> halted_remainder = ops::mul(halt_t, ops::affine(cum, T(-1), T(1)));
        Tensor<T> w = ops::add(ops::mul(cont_t, h), halted_remainder);
        remainder_sum = ops::add(remainder_sum, halted_remainder);

        state = ops::add(state, f);  // s_i = s_{i-1} + F(x_i)
        y = ops::add(y, ops::per_sample_scale(state, w));
        cum = ops::add(cum, h);

        for (int64_t b = 0; b < batch; ++b) {
            const size_t bi = static_cast<size_t>(b);
            if (!alive[bi]) continue;
            cum_values[bi] += static_cast<double>(hv[b]);
            alive[bi] = cont_t.values()[b] != T(0) ? 1 : 0;
        }
        if (!any_alive_next) break;
    }

    std::vector<T> n_values(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) {
        auto& t = traces[static_cast<size_t>(b)];
        t.ponder = t.n_iters + t.remainder;
        n_values[static_cast<size_t>(b)] = static_cast<T>(t.n_iters);
    }
    Tensor<T> ponder = ops::add(remainder_sum, Tensor<T>::from({batch}, std::move(n_values)));

    return BlockResult<T>{y, std::move(traces), ponder};
}

template class IterativeBlock<float>;
template class IterativeBlock<double>;

}  // namespace iamnn
