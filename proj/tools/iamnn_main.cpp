#include <iostream>

#include "CLI11.hpp"

#include "iamnn/cli.hpp"

namespace {

void add_common(CLI::App* cmd, iamnn::cli::Options& opts) {
    cmd->add_option("--config", opts.config_path, "Path to a key = value configuration file")
        ->required();
    cmd->add_option("--seed", opts.seed, "Override the config's RNG seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IamNN: weight-shared iterative residual network with adaptive computation time"};
    app.require_subcommand(1);

    iamnn::cli::Options opts;

    CLI::App* train = app.add_subcommand("train", "Train a model and write metrics + checkpoints");
    add_common(train, opts);
    train->add_option("--data-dir", opts.data_dir, "Directory with CIFAR binary files");
    train->add_option("--out-dir", opts.out_dir, "Output directory for metrics and checkpoints")
        ->required();
    train->add_option("--max-steps", opts.max_steps, "Override the config's max_steps");
    train->add_option("--tau", opts.tau, "Override the iteration-count loss coefficient");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
    add_common(eval, opts);
    eval->add_option("--data-dir", opts.data_dir, "Directory with CIFAR binary files");
    eval->add_option("--checkpoint", opts.checkpoint, "Checkpoint to evaluate")->required();
    eval->add_option("--out-dir", opts.out_dir, "Optional output directory for eval_summary.json");

    CLI::App* count = app.add_subcommand(
        "count", "Print analytic parameter and FLOPs counts for a configuration");
    add_common(count, opts);
    count->add_option("--reference", opts.reference,
                      "Also print a reference network (resnet18|resnet101|resnet152)");
    count->add_option("--input-size", opts.input_size, "Override the config's input size");
    count->add_option("--out-dir", opts.out_dir, "Optional output directory for count.json");

    CLI::App* analyze = app.add_subcommand(
        "analyze", "Export iteration histograms and the per-sample difficulty ranking");
    add_common(analyze, opts);
    analyze->add_option("--data-dir", opts.data_dir, "Directory with CIFAR binary files");
    analyze->add_option("--checkpoint", opts.checkpoint, "Checkpoint to analyze")->required();
    analyze->add_option("--out-dir", opts.out_dir, "Output directory for the CSV/JSON files")
        ->required();

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) return iamnn::cli::cmd_train(opts, std::cout, std::cerr);
    if (eval->parsed()) return iamnn::cli::cmd_eval(opts, std::cout, std::cerr);
    if (count->parsed()) return iamnn::cli::cmd_count(opts, std::cout, std::cerr);
    if (analyze->parsed()) return iamnn::cli::cmd_analyze(opts, std::cout, std::cerr);
    return 2;
}
