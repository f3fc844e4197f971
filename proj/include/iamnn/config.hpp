#pragma once

#include <string>

#include "iamnn/data.hpp"
#include "iamnn/network.hpp"
#include "iamnn/training.hpp"

namespace iamnn {

enum class DatasetKind { Synthetic, Cifar10, Cifar100 };

struct DataConfig {
    DatasetKind kind = DatasetKind::Synthetic;
    SyntheticSpec synth;
    int synth_val_samples_per_class = 20;
};

struct FullConfig {
    NetConfig net;
    TrainConfig train;
    DataConfig data;
};

// Flat `key = value` format; '#' starts a comment.  Unknown keys are
// rejected with an error naming the key.  The schema is documented in the
// README and the shipped configs/.
FullConfig parse_config_text(const std::string& text);
FullConfig parse_config_file(const std::string& path);

}  // namespace iamnn
