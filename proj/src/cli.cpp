#include "iamnn/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "iamnn/checkpoint.hpp"
#include "iamnn/config.hpp"
#include "iamnn/cost.hpp"

namespace iamnn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

FullConfig load_config(const Options& opts) {
    if (opts.config_path.empty()) throw ConfigError("missing --config PATH");
    FullConfig cfg = parse_config_file(opts.config_path);
    if (opts.seed) {
        cfg.train.seed = *opts.seed;
        cfg.data.synth.seed = *opts.seed;
    }
    if (opts.max_steps) cfg.train.max_steps = *opts.max_steps;
    if (opts.tau) {
        cfg.train.act_tau = *opts.tau;
        cfg.net.act_tau = *opts.tau;
    }
    if (opts.input_size) {
        cfg.net.input_size = *opts.input_size;
        cfg.data.synth.image_size = *opts.input_size;
        cfg.net.validate();
    }
    return cfg;
}

Dataset load_dataset(const FullConfig& cfg, const Options& opts, bool train_split) {
    switch (cfg.data.kind) {
        case DatasetKind::Synthetic: {
            SyntheticSpec spec = cfg.data.synth;
            if (!train_split) {
                spec.samples_per_class = cfg.data.synth_val_samples_per_class;
                spec.seed = spec.seed + 1000003;  // disjoint validation stream
            }
            return gen_synthetic(spec);
        }
        case DatasetKind::Cifar10:
        case DatasetKind::Cifar100: {
            if (opts.data_dir.empty()) {
                throw DataFormatError("missing --data-dir (directory with the CIFAR binaries)", 0);
            }
            const CifarVariant variant = cfg.data.kind == DatasetKind::Cifar10
                                             ? CifarVariant::Cifar10
                                             : CifarVariant::Cifar100;
            return load_cifar_dir(opts.data_dir, variant, train_split);
        }
    }
    throw ConfigError("unreachable dataset kind");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot write " + path.string());
    out << text;
}

json eval_to_json(const EvalReport& report) {
    json j;
    j["samples"] = report.samples;
    j["top1"] = report.top1;
    j["top" + std::to_string(report.topk)] = report.topk_accuracy;
    j["flops"] = {{"min", report.cost.min_flops},
                  {"mean", report.cost.mean_flops},
                  {"max", report.cost.max_flops}};
    json hists = json::array();
    for (size_t b = 0; b < report.cost.histograms.size(); ++b) {
        hists.push_back({{"block", b + 1}, {"counts", report.cost.histograms[b]}});
    }
    j["iteration_histograms"] = hists;
    return j;
}

int run_guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataFormatError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int worker_threads() {
    const char* env = std::getenv("IAMNN_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return std::max(1, n);
}

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() {
        FullConfig cfg = load_config(opts);
        if (opts.out_dir.empty()) throw ConfigError("missing --out-dir PATH");
        fs::create_directories(opts.out_dir);
        Dataset data = load_dataset(cfg, opts, /*train_split=*/true);

        Network<float> net(cfg.net, cfg.train.seed);
        std::ofstream metrics(fs::path(opts.out_dir) / "metrics.csv");
        std::ofstream log(fs::path(opts.out_dir) / "train.log");
        TrainResult result = train_model(net, data, cfg.train, &metrics, &log, opts.out_dir);

        json summary;
        summary["steps"] = result.steps_run;
        summary["final_loss"] = result.final_loss;
        summary["final_train_accuracy"] = result.final_accuracy;
        summary["checkpoint"] = (fs::path(opts.out_dir) / "checkpoint_final.iamnn").string();
        write_text(fs::path(opts.out_dir) / "summary.json", summary.dump(2) + "\n");
        out << "trained " << result.steps_run << " steps, final loss " << result.final_loss
            << ", train accuracy " << result.final_accuracy << "\n";
        return 0;
    });
}

int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() {
        FullConfig cfg = load_config(opts);
        if (opts.checkpoint.empty()) throw ConfigError("missing --checkpoint PATH");
        Dataset data = load_dataset(cfg, opts, /*train_split=*/false);

        Network<float> net(cfg.net, cfg.train.seed);
        load_checkpoint<float>(opts.checkpoint, cfg.net, net.params(), nullptr);
        EvalReport report = evaluate(net, data, cfg.train.eval_batch, cfg.train.topk,
                                     worker_threads());
        const json j = eval_to_json(report);
        if (!opts.out_dir.empty()) {
            fs::create_directories(opts.out_dir);
            write_text(fs::path(opts.out_dir) / "eval_summary.json", j.dump(2) + "\n");
        }
        out << j.dump(2) << "\n";
        return 0;
    });
}

int cmd_count(const Options& opts, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() {
        FullConfig cfg = load_config(opts);
        const ParamCountBreakdown params = count_params(cfg.net);
        const FlopsBreakdown flops = count_flops(cfg.net);

        json j;
        j["params"] = {{"stem", params.stem},         {"shared_conv", params.shared_conv},
                       {"per_iter_bn", params.per_iter_bn}, {"act_heads", params.act_heads},
                       {"head", params.head},         {"total", params.total}};
        j["flops"] = {{"min", flops.total_min()}, {"max", flops.total_max()}};
        json per_block = json::array();
        for (size_t b = 0; b < flops.block_iter.size(); ++b) {
            per_block.push_back({{"block", b + 1},
                                 {"per_iteration", flops.block_iter[b]},
                                 {"act_head_per_iteration", flops.block_act[b]},
                                 {"max_iterations", flops.max_iters[b]}});
        }
        j["flops"]["per_block"] = per_block;
        j["flops"]["fixed"] = flops.stem;
        j["flops"]["classifier"] = flops.classifier;

        if (!opts.reference.empty()) {
            const ResNetRef ref = resnet_ref_from_name(opts.reference);
            const int64_t ref_params = count_params_resnet(ref, cfg.net.num_classes);
            const double ref_flops =
                count_flops_resnet(ref, cfg.net.input_size, cfg.net.num_classes);
            j["reference"] = {
                {"name", resnet_ref_name(ref)},
                {"params", ref_params},
                {"flops", ref_flops},
                {"param_reduction_percent",
                 100.0 * (1.0 - static_cast<double>(params.total) / static_cast<double>(ref_params))},
                {"flops_reduction_percent_at_max",
                 100.0 * (1.0 - flops.total_max() / ref_flops)},
                {"flops_reduction_percent_at_min",
                 100.0 * (1.0 - flops.total_min() / ref_flops)},
            };
        }

        out << "parameters\n";
        for (const char* k : {"stem", "shared_conv", "per_iter_bn", "act_heads", "head", "total"}) {
            out << "  " << k << "  " << j["params"][k].get<int64_t>() << "\n";
        }
        out << "flops\n";
        out << "  min (all blocks at 1 iteration)  " << j["flops"]["min"].get<double>() << "\n";
        out << "  max (all blocks at max iterations)  " << j["flops"]["max"].get<double>() << "\n";
        if (j.contains("reference")) {
            out << "reference " << j["reference"]["name"].get<std::string>() << "\n";
            out << "  params  " << j["reference"]["params"].get<int64_t>() << "\n";
            out << "  flops   " << j["reference"]["flops"].get<double>() << "\n";
            out << "  param reduction  "
                << j["reference"]["param_reduction_percent"].get<double>() << "%\n";
        }
        out << j.dump(2) << "\n";
        if (!opts.out_dir.empty()) {
            fs::create_directories(opts.out_dir);
            write_text(fs::path(opts.out_dir) / "count.json", j.dump(2) + "\n");
        }
        return 0;
    });
}

int cmd_analyze(const Options& opts, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() {
        FullConfig cfg = load_config(opts);
        if (opts.checkpoint.empty()) throw ConfigError("missing --checkpoint PATH");
        if (opts.out_dir.empty()) throw ConfigError("missing --out-dir PATH");
        fs::create_directories(opts.out_dir);
        Dataset data = load_dataset(cfg, opts, /*train_split=*/false);

        Network<float> net(cfg.net, cfg.train.seed);
        load_checkpoint<float>(opts.checkpoint, cfg.net, net.params(), nullptr);
        EvalReport report = evaluate(net, data, cfg.train.eval_batch, cfg.train.topk,
                                     worker_threads());

        for (size_t b = 0; b < report.cost.histograms.size(); ++b) {
            std::ofstream hist(fs::path(opts.out_dir) /
                               ("iteration_hist_block" + std::to_string(b + 1) + ".csv"));
            hist << "iterations,count\n";
            for (size_t n = 0; n < report.cost.histograms[b].size(); ++n) {
                hist << (n + 1) << "," << report.cost.histograms[b][n] << "\n";
            }
        }

        // Easy-to-hard spectrum: every sample ordered by realized cost.
        std::vector<size_t> order(report.cost.per_sample_flops.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b2) {
            if (report.cost.per_sample_flops[a] != report.cost.per_sample_flops[b2]) {
                return report.cost.per_sample_flops[a] < report.cost.per_sample_flops[b2];
            }
            return report.cost.ids[a] < report.cost.ids[b2];
        });
        {
            std::ofstream rank(fs::path(opts.out_dir) / "difficulty_ranking.csv");
            rank << "id,label,predicted";
            for (size_t b = 0; b < report.cost.histograms.size(); ++b) {
                rank << ",iters_block" << (b + 1);
            }
            rank << ",flops\n";
            for (size_t i : order) {
                rank << report.cost.ids[i] << "," << report.labels[i] << ","
                     << report.predictions[i];
                for (int n : report.cost.per_sample_iters[i]) rank << "," << n;
                rank << "," << static_cast<int64_t>(report.cost.per_sample_flops[i]) << "\n";
            }
        }

        const json j = eval_to_json(report);
        write_text(fs::path(opts.out_dir) / "summary.json", j.dump(2) + "\n");
        out << j.dump(2) << "\n";
        return 0;
    });
}

}  // namespace iamnn::cli
