#include "iamnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <thread>

#include "iamnn/checkpoint.hpp"

namespace iamnn {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (max_steps < 0) throw ConfigError("train config: max_steps must be >= 0");
    if (act_tau < 0.0) throw ConfigError("train config: act_tau must be >= 0");
    if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be > 0");
}

template <typename T>
void Optimizer<T>::step(ParamStore<T>& store, T lr) {
    ++t;
    for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        Tensor<T> p = e.tensor;
        auto& bufs = slots[e.name];
        const size_t n = static_cast<size_t>(p.numel());
        if (kind == OptKind::SgdMomentum) {
            if (bufs.empty()) bufs.emplace_back(n, T(0));
            auto& vel = bufs[0];
            T* pv = p.values().data();
            auto g = p.grad();  // zeros when no gradient reached this tensor
            for (size_t i = 0; i < n; ++i) {
                vel[i] = momentum * vel[i] + g[i];
                pv[i] -= lr * vel[i];
            }
        } else {
            if (bufs.empty()) {
                bufs.emplace_back(n, T(0));
                bufs.emplace_back(n, T(0));
            }
            auto& m = bufs[0];
            auto& v = bufs[1];
            const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
            const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
            T* pv = p.values().data();
            auto g = p.grad();
            for (size_t i = 0; i < n; ++i) {
                m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
                v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
                pv[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }
    }
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& logits, std::span<const int> labels,
                     const std::vector<Tensor<T>>& ponder_per_block, T tau) {
    if (tau < T(0)) throw ConfigError("total_loss: tau must be >= 0");
    Tensor<T> ce = ops::softmax_cross_entropy(logits, labels);
    if (tau == T(0) || ponder_per_block.empty()) return ce;
    Tensor<T> ponder_sum = ponder_per_block[0];
    for (size_t i = 1; i < ponder_per_block.size(); ++i) {
        ponder_sum = ops::add(ponder_sum, ponder_per_block[i]);
    }
    Tensor<T> penalty = ops::affine(ops::mean_all(ponder_sum), tau, T(0));
    return ops::add(ce, penalty);
}

template <typename T>
StepResult<T> train_step(Network<T>& net, Optimizer<T>& opt, const Tensor<T>& images,
                         std::span<const int> labels, T tau, T lr, int64_t step) {
    StepResult<T> out;
    {
        Graph<T> tape;
        NetResult<T> res = net.forward(images, Mode::Train);
        Tensor<T> loss = total_loss(res.logits, labels, res.ponder, tau);
        out.loss = loss.scalar();
        if (!std::isfinite(static_cast<double>(out.loss))) {
            throw DivergenceError("training loss is not finite", step);
        }
        const std::vector<int> pred = ops::argmax_rows(res.logits);
        int64_t correct = 0;
        for (size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
        out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
        for (const auto& p : res.ponder) {
            double acc = 0.0;
            for (auto v : p.values()) acc += static_cast<double>(v);
            out.ponder_means.push_back(acc / static_cast<double>(p.numel()));
        }
        tape.backward(loss);
    }
    opt.step(net.params(), lr);
    net.params().zero_grads();
    return out;
}

namespace {

void augment_batch(Tensor<float>& images, Rng& rng) {
    const int64_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const int pad = 4;
    std::vector<float> plane(static_cast<size_t>((h + 2 * pad) * (w + 2 * pad)), 0.0f);
    float* v = images.values().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        const int dy = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(2 * pad + 1));
        const int dx = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(2 * pad + 1));
        const bool flip = (rng.next_u64() & 1) != 0;
        for (int64_t ci = 0; ci < c; ++ci) {
            float* img = v + (bi * c + ci) * h * w;
            std::fill(plane.begin(), plane.end(), 0.0f);
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t sx = flip ? (w - 1 - x) : x;
                    plane[static_cast<size_t>((y + pad) * (w + 2 * pad) + (x + pad))] =
                        img[y * w + sx];
                }
            }
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    img[y * w + x] = plane[static_cast<size_t>((y + dy) * (w + 2 * pad) + x + dx)];
                }
            }
        }
    }
}

}  // namespace

TrainResult train_model(Network<float>& net, const Dataset& data, const TrainConfig& tc,
                        std::ostream* metrics_csv, std::ostream* text_log,
                        const std::string& checkpoint_dir) {
    tc.validate();
    if (data.size() == 0) throw ContractError("train_model: empty dataset");
    const int64_t batch_size = std::min<int64_t>(tc.batch_size, data.size());

    Optimizer<float> opt(tc.optimizer, tc);
    Rng run_rng(mix_seed(tc.seed, "train.loop"));
    TrainResult result;

    if (metrics_csv) {
        *metrics_csv << "step,loss,accuracy";
        for (size_t b = 0; b < net.blocks.size(); ++b) *metrics_csv << ",ponder_block" << (b + 1);
        *metrics_csv << "\n";
    }

    std::vector<std::vector<int64_t>> epoch_batches;
    size_t batch_cursor = 0;
    int64_t epoch = 0;
    double running_acc = 0.0;
    bool running_acc_init = false;

    for (int64_t step = 1; step <= tc.max_steps; ++step) {
        if (batch_cursor >= epoch_batches.size()) {
            epoch_batches = batches(data.size(), batch_size,
                                    mix_seed(tc.seed, "epoch" + std::to_string(epoch)));
            batch_cursor = 0;
            ++epoch;
        }
        Tensor<float> images;
        Batch batch = gather_batch(data, epoch_batches[batch_cursor++], images);
        if (tc.augment) augment_batch(images, run_rng);

        const double lr = tc.lr_decay_steps > 0
                              ? tc.learning_rate *
                                    std::pow(tc.lr_decay_factor,
                                             static_cast<double>((step - 1) / tc.lr_decay_steps))
                              : tc.learning_rate;
        StepResult<float> sr = train_step(net, opt, images, batch.labels,
                                          static_cast<float>(tc.act_tau), static_cast<float>(lr),
                                          step);

        result.steps_run = step;
        result.final_loss = static_cast<double>(sr.loss);
        result.final_accuracy = sr.accuracy;
        result.records.push_back(StepRecord{step, static_cast<double>(sr.loss), sr.accuracy,
                                            sr.ponder_means});
        if (metrics_csv) {
            *metrics_csv << step << "," << static_cast<double>(sr.loss) << "," << sr.accuracy;
            for (double p : sr.ponder_means) *metrics_csv << "," << p;
            *metrics_csv << "\n";
        }
        if (text_log) {
            *text_log << "step " << step << " loss " << static_cast<double>(sr.loss) << " acc "
                      << sr.accuracy << "\n";
        }
        if (!checkpoint_dir.empty() && tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) {
            save_checkpoint<float>(
                (std::filesystem::path(checkpoint_dir) / ("checkpoint_" + std::to_string(step) + ".iamnn"))
                    .string(),
                net.config(), net.params(), &opt, step, run_rng.state());
        }
        running_acc = running_acc_init ? 0.9 * running_acc + 0.1 * sr.accuracy : sr.accuracy;
        running_acc_init = true;
        if (tc.stop_at_accuracy > 0.0 && running_acc >= tc.stop_at_accuracy) break;
    }

    if (!checkpoint_dir.empty()) {
        save_checkpoint<float>(
            (std::filesystem::path(checkpoint_dir) / "checkpoint_final.iamnn").string(),
            net.config(), net.params(), &opt, result.steps_run, run_rng.state());
    }
    return result;
}

namespace {

EvalReport evaluate_range(Network<float>& net, const Dataset& data, int64_t begin, int64_t end,
                          int batch_size, int topk) {
    EvalReport report;
    report.topk = topk;
    for (int64_t start = begin; start < end; start += batch_size) {
        const int64_t stop = std::min(end, start + batch_size);
        std::vector<int64_t> idx(static_cast<size_t>(stop - start));
        for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
        Tensor<float> images;
        Batch batch = gather_batch(data, idx, images);
        NetResult<float> res = net.forward(images, Mode::Eval);

        const auto logits = res.logits.values();
        const int64_t k = res.logits.dim(1);
        const std::vector<int> pred = ops::argmax_rows(res.logits);
        for (size_t i = 0; i < batch.labels.size(); ++i) {
            const int label = batch.labels[i];
            report.top1 += pred[i] == label;
            int better = 0;
            const float own = logits[static_cast<int64_t>(i) * k + label];
            for (int64_t j = 0; j < k; ++j) {
                better += logits[static_cast<int64_t>(i) * k + j] > own;
            }
            report.topk_accuracy += better < topk;
            report.labels.push_back(label);
            report.predictions.push_back(pred[i]);
        }
        CostReport part = attach_costs(res.traces, net.config(), batch.ids);
        merge_cost_reports(report.cost, part);
        report.samples += stop - start;
    }
    return report;
}

}  // namespace

EvalReport evaluate(Network<float>& net, const Dataset& data, int batch_size, int topk,
                    int num_threads) {
    if (data.size() == 0) throw ContractError("evaluate: empty dataset");
    batch_size = static_cast<int>(std::min<int64_t>(batch_size, data.size()));
    topk = std::min<int>(topk, net.config().num_classes);
    const int threads = std::max(1, std::min<int>(num_threads, static_cast<int>(data.size())));

    std::vector<EvalReport> parts(static_cast<size_t>(threads));
    if (threads == 1) {
        parts[0] = evaluate_range(net, data, 0, data.size(), batch_size, topk);
    } else {
        std::vector<std::thread> pool;
        const int64_t chunk = (data.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int64_t begin = t * chunk;
            const int64_t end = std::min<int64_t>(data.size(), begin + chunk);
            pool.emplace_back([&, t, begin, end]() {
                if (begin < end) {
                    parts[static_cast<size_t>(t)] =
                        evaluate_range(net, data, begin, end, batch_size, topk);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    EvalReport report;
    report.topk = topk;
    for (auto& p : parts) {
        if (p.samples == 0) continue;
        report.top1 += p.top1;
        report.topk_accuracy += p.topk_accuracy;
        report.samples += p.samples;
        report.labels.insert(report.labels.end(), p.labels.begin(), p.labels.end());
        report.predictions.insert(report.predictions.end(), p.predictions.begin(),
                                  p.predictions.end());
        merge_cost_reports(report.cost, p.cost);
    }
    report.top1 /= static_cast<double>(report.samples);
    report.topk_accuracy /= static_cast<double>(report.samples);
    return report;
}

template class Optimizer<float>;
template class Optimizer<double>;

template Tensor<float> total_loss<float>(const Tensor<float>&, std::span<const int>,
                                         const std::vector<Tensor<float>>&, float);
template Tensor<double> total_loss<double>(const Tensor<double>&, std::span<const int>,
                                           const std::vector<Tensor<double>>&, double);
template StepResult<float> train_step<float>(Network<float>&, Optimizer<float>&,
                                             const Tensor<float>&, std::span<const int>, float,
                                             float, int64_t);
template StepResult<double> train_step<double>(Network<double>&, Optimizer<double>&,
                                               const Tensor<double>&, std::span<const int>, double,
                                               double, int64_t);

}  // namespace iamnn
