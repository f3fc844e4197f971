#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "iamnn/cost.hpp"
#include "iamnn/data.hpp"
#include "iamnn/network.hpp"

namespace iamnn {

enum class OptKind { SgdMomentum, Adam };

struct TrainConfig {
    OptKind optimizer = OptKind::SgdMomentum;
    double learning_rate = 0.05;
    int lr_decay_steps = 0;  // 0 = constant schedule
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    int batch_size = 32;
    int max_steps = 1000;
    double act_tau = 0.0;
    uint64_t seed = 1;
    int checkpoint_every = 0;  // 0 = only a final checkpoint
    bool augment = false;      // pad-4 random crop + horizontal flip
    int eval_batch = 64;
    int topk = 5;
    double stop_at_accuracy = -1.0;  // early stop on running train accuracy

    void validate() const;
};

template <typename T>
class Optimizer {
public:
    Optimizer(OptKind kind, const TrainConfig& tc)
        : kind(kind),
          momentum(static_cast<T>(tc.momentum)),
          beta1(static_cast<T>(tc.adam_beta1)),
          beta2(static_cast<T>(tc.adam_beta2)),
          eps(static_cast<T>(tc.adam_eps)) {}

    void step(ParamStore<T>& store, T lr);

    OptKind kind;
    int64_t t = 0;
    T momentum, beta1, beta2, eps;
    // name -> slot buffers (1 for SGD momentum, 2 for Adam).
    std::unordered_map<std::string, std::vector<std::vector<T>>> slots;
};

// cross_entropy(logits, labels) + tau * mean over samples of the summed
// per-block ponder costs (N + R); the remainder part carries gradient back
// into the halting scores, the iteration count does not.  tau == 0 returns
// the cross entropy untouched.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& logits, std::span<const int> labels,
                     const std::vector<Tensor<T>>& ponder_per_block, T tau);

template <typename T>
struct StepResult {
    T loss;
    double accuracy;
    std::vector<double> ponder_means;  // per block, batch mean of N + R
};

// One forward/loss/backward/update cycle; gradients are zeroed afterwards.
template <typename T>
StepResult<T> train_step(Network<T>& net, Optimizer<T>& opt, const Tensor<T>& images,
                         std::span<const int> labels, T tau, T lr, int64_t step);

struct StepRecord {
    int64_t step;
    double loss;
    double accuracy;
    std::vector<double> ponder_means;
};

struct TrainResult {
    int64_t steps_run = 0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    std::vector<StepRecord> records;
};

// Runs up to max_steps optimizer steps over shuffled epochs.  metrics_csv,
// when given, receives one "step,loss,accuracy,ponder_block*" row per step;
// text_log receives the same lines in a readable form.  checkpoint_dir,
// when non-empty, receives periodic checkpoints plus a final one.
TrainResult train_model(Network<float>& net, const Dataset& data, const TrainConfig& tc,
                        std::ostream* metrics_csv = nullptr, std::ostream* text_log = nullptr,
                        const std::string& checkpoint_dir = "");

struct EvalReport {
    double top1 = 0.0;
    double topk_accuracy = 0.0;
    int topk = 5;
    int64_t samples = 0;
    std::vector<int> labels;       // aligned with cost.ids
    std::vector<int> predictions;  // aligned with cost.ids
    CostReport cost;
};

// Eval-mode pass over the whole dataset (running BN statistics, per-sample
// early exit).  num_threads > 1 shards the dataset; per-sample results are
// identical to a single-threaded run.
EvalReport evaluate(Network<float>& net, const Dataset& data, int batch_size, int topk,
                    int num_threads = 1);

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace iamnn
