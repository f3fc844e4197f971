#pragma once

#include <optional>
#include <ostream>
#include <string>

namespace iamnn::cli {

struct Options {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;
    std::optional<uint64_t> seed;
    std::optional<int> max_steps;
    std::optional<double> tau;
    std::string reference;          // count: resnet18 | resnet101 | resnet152
    std::optional<int> input_size;  // count: overrides the config's input size
};

// Exit codes: 0 success, 1 runtime failure (divergence), 2 configuration,
// data or checkpoint errors.
int cmd_train(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_count(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_analyze(const Options& opts, std::ostream& out, std::ostream& err);

// IAMNN_THREADS, clamped to >= 1; default 1 (deterministic test mode).
int worker_threads();

}  // namespace iamnn::cli
