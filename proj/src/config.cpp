#include "iamnn/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace iamnn {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

}  // namespace

FullConfig parse_config_text(const std::string& text) {
    FullConfig cfg;
    std::vector<int> block_channels, block_max_iters, block_bottleneck;
    int bottleneck_divisor = 4;
    int act_hidden = 64;
    double act_epsilon = 0.01;
    ActActivation act_activation = ActActivation::Relu;
    bool synth_seed_set = false;

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
        }

        if (key == "input_channels") {
            cfg.net.input_channels = to_int(key, value);
        } else if (key == "input_size") {
            cfg.net.input_size = to_int(key, value);
        } else if (key == "num_classes") {
            cfg.net.num_classes = to_int(key, value);
        } else if (key == "stem_kernel") {
            cfg.net.stem.kernel = to_int(key, value);
        } else if (key == "stem_stride") {
            cfg.net.stem.stride = to_int(key, value);
        } else if (key == "stem_channels") {
            cfg.net.stem.out_channels = to_int(key, value);
        } else if (key == "stem_maxpool") {
            cfg.net.stem.use_maxpool = to_bool(key, value);
        } else if (key == "block_channels") {
            for (const auto& v : split_csv(value)) block_channels.push_back(to_int(key, v));
        } else if (key == "block_max_iters") {
            for (const auto& v : split_csv(value)) block_max_iters.push_back(to_int(key, v));
        } else if (key == "block_bottleneck") {
            for (const auto& v : split_csv(value)) block_bottleneck.push_back(to_int(key, v));
        } else if (key == "bottleneck_divisor") {
            bottleneck_divisor = to_int(key, value);
        } else if (key == "act_hidden") {
            act_hidden = to_int(key, value);
        } else if (key == "act_epsilon") {
            act_epsilon = to_double(key, value);
        } else if (key == "act_activation") {
            if (value == "relu") {
                act_activation = ActActivation::Relu;
            } else if (value == "tanh") {
                act_activation = ActActivation::Tanh;
            } else if (value == "sigmoid") {
                act_activation = ActActivation::Sigmoid;
            } else {
                throw ConfigError("config key 'act_activation': unknown activation '" + value + "'");
            }
        } else if (key == "act_tau") {
            cfg.net.act_tau = to_double(key, value);
            cfg.train.act_tau = cfg.net.act_tau;
        } else if (key == "optimizer") {
            if (value == "sgd") {
                cfg.train.optimizer = OptKind::SgdMomentum;
            } else if (value == "adam") {
                cfg.train.optimizer = OptKind::Adam;
            } else {
                throw ConfigError("config key 'optimizer': expected sgd or adam, got '" + value + "'");
            }
        } else if (key == "learning_rate") {
            cfg.train.learning_rate = to_double(key, value);
        } else if (key == "lr_decay_steps") {
            cfg.train.lr_decay_steps = to_int(key, value);
        } else if (key == "lr_decay_factor") {
            cfg.train.lr_decay_factor = to_double(key, value);
        } else if (key == "momentum") {
            cfg.train.momentum = to_double(key, value);
        } else if (key == "adam_beta1") {
            cfg.train.adam_beta1 = to_double(key, value);
        } else if (key == "adam_beta2") {
            cfg.train.adam_beta2 = to_double(key, value);
        } else if (key == "adam_eps") {
            cfg.train.adam_eps = to_double(key, value);
        } else if (key == "batch_size") {
            cfg.train.batch_size = to_int(key, value);
        } else if (key == "max_steps") {
            cfg.train.max_steps = to_int(key, value);
        } else if (key == "seed") {
            cfg.train.seed = static_cast<uint64_t>(to_int(key, value));
            if (!synth_seed_set) cfg.data.synth.seed = cfg.train.seed;
        } else if (key == "checkpoint_every") {
            cfg.train.checkpoint_every = to_int(key, value);
        } else if (key == "augment") {
            cfg.train.augment = to_bool(key, value);
        } else if (key == "eval_batch") {
            cfg.train.eval_batch = to_int(key, value);
        } else if (key == "topk") {
            cfg.train.topk = to_int(key, value);
        } else if (key == "stop_at_accuracy") {
            cfg.train.stop_at_accuracy = to_double(key, value);
        } else if (key == "dataset") {
            if (value == "synthetic") {
                cfg.data.kind = DatasetKind::Synthetic;
            } else if (value == "cifar10") {
                cfg.data.kind = DatasetKind::Cifar10;
            } else if (value == "cifar100") {
                cfg.data.kind = DatasetKind::Cifar100;
            } else {
                throw ConfigError("config key 'dataset': unknown dataset '" + value + "'");
            }
        } else if (key == "synth_samples_per_class") {
            cfg.data.synth.samples_per_class = to_int(key, value);
        } else if (key == "synth_val_samples_per_class") {
            cfg.data.synth_val_samples_per_class = to_int(key, value);
        } else if (key == "synth_noise_levels") {
            cfg.data.synth.noise_levels.clear();
            for (const auto& v : split_csv(value)) {
                cfg.data.synth.noise_levels.push_back(to_double(key, v));
            }
        } else if (key == "synth_seed") {
            cfg.data.synth.seed = static_cast<uint64_t>(to_int(key, value));
            synth_seed_set = true;
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }

    if (block_channels.empty()) {
        throw ConfigError("config: block_channels is required");
    }
    if (block_max_iters.size() != block_channels.size()) {
        throw ConfigError("config: block_max_iters must list one value per block");
    }
    if (!block_bottleneck.empty() && block_bottleneck.size() != block_channels.size()) {
        throw ConfigError("config: block_bottleneck must list one value per block");
    }
    for (size_t i = 0; i < block_channels.size(); ++i) {
        BlockConfig b;
        b.channels = block_channels[i];
        b.bottleneck_channels = block_bottleneck.empty()
                                    ? std::max(1, block_channels[i] / bottleneck_divisor)
                                    : block_bottleneck[i];
        b.max_iterations = block_max_iters[i];
        b.act_hidden = act_hidden;
        b.act_epsilon = act_epsilon;
        b.act_activation = act_activation;
        cfg.net.blocks.push_back(b);
    }
    cfg.data.synth.num_classes = cfg.net.num_classes;
    cfg.data.synth.image_size = cfg.net.input_size;
    cfg.net.validate();
    cfg.train.validate();
    return cfg;
}

FullConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace iamnn
