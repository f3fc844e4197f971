#include "iamnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "iamnn/errors.hpp"
#include "iamnn/init.hpp"

namespace iamnn {

namespace {

constexpr int kCifarSize = 32;
constexpr int kCifarPixels = 3 * kCifarSize * kCifarSize;

void normalize_in_place(Dataset& data) {
    const int64_t n = data.size();
    if (n == 0) return;
    const int64_t c = data.images.dim(1);
    const int64_t hw = data.images.dim(2) * data.images.dim(3);
    data.channel_mean.assign(static_cast<size_t>(c), 0.0);
    data.channel_std.assign(static_cast<size_t>(c), 1.0);
    float* v = data.images.values().data();
    for (int64_t ci = 0; ci < c; ++ci) {
        double sum = 0.0, sq = 0.0;
        for (int64_t bi = 0; bi < n; ++bi) {
            const float* p = v + (bi * c + ci) * hw;
            for (int64_t o = 0; o < hw; ++o) {
                sum += p[o];
                sq += static_cast<double>(p[o]) * p[o];
            }
        }
        const double count = static_cast<double>(n * hw);
        const double mean = sum / count;
        const double var = std::max(sq / count - mean * mean, 1e-12);
        const double stddev = std::sqrt(var);
        data.channel_mean[static_cast<size_t>(ci)] = mean;
        data.channel_std[static_cast<size_t>(ci)] = stddev;
        for (int64_t bi = 0; bi < n; ++bi) {
            float* p = v + (bi * c + ci) * hw;
            for (int64_t o = 0; o < hw; ++o) {
                p[o] = static_cast<float>((p[o] - mean) / stddev);
            }
        }
    }
}

// Base intensity in roughly [0.15, 0.85] so additive noise survives clamping.
double pattern_value(int cls, int ch, int x, int y, int size) {
    const int kind = cls % 8;
    const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
    const int period = 2 + (cls / 8) % 3;
    bool on = false;
    switch (kind) {
        case 0:
            on = (x / period) % 2 == 0;
            break;
        case 1:
            on = (y / period) % 2 == 0;
            break;
        case 2:
            on = ((x / period) + (y / period)) % 2 == 0;
            break;
        case 3:
            on = std::abs(x - cx) < size / 4.0 && std::abs(y - cy) < size / 4.0;
            break;
        case 4: {
            const double r = std::hypot(x - cx, y - cy);
            on = r < size / 3.0 && r > size / 8.0;
            break;
        }
        case 5:
            on = ((x + y) / period) % 2 == 0;
            break;
        case 6:
            on = std::abs(x - cx) < size / 8.0 || std::abs(y - cy) < size / 8.0;
            break;
        case 7:
        default:
            on = (x * y) % (period + 2) == 0;
            break;
    }
    const double hi = 0.55 + 0.28 * std::sin(1.7 * cls + 2.3 * ch + 0.5);
    const double lo = 0.32 + 0.14 * std::cos(2.9 * cls + 1.1 * ch);
    return on ? hi : lo;
}

}  // namespace

Dataset load_cifar_file(const std::string& path, CifarVariant variant) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataFormatError("cannot open " + path, 0);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const size_t record = variant == CifarVariant::Cifar10 ? 1 + kCifarPixels : 2 + kCifarPixels;
    if (bytes.empty() || bytes.size() % record != 0) {
        throw DataFormatError(path + ": length " + std::to_string(bytes.size()) +
                                  " is not a multiple of the record size " + std::to_string(record),
                              (bytes.size() / record) * record);
    }
    const int64_t n = static_cast<int64_t>(bytes.size() / record);
    Dataset data;
    data.num_classes = variant == CifarVariant::Cifar10 ? 10 : 100;
    data.images = Tensor<float>::zeros({n, 3, kCifarSize, kCifarSize});
    float* v = data.images.values().data();
    for (int64_t i = 0; i < n; ++i) {
        const unsigned char* rec =
            reinterpret_cast<const unsigned char*>(bytes.data()) + static_cast<size_t>(i) * record;
        const int label = variant == CifarVariant::Cifar10 ? rec[0] : rec[1];  // fine label
        if (label >= data.num_classes) {
            throw DataFormatError(path + ": label " + std::to_string(label) + " out of range",
                                  static_cast<size_t>(i) * record);
        }
        data.labels.push_back(label);
        data.ids.push_back(i);
        const unsigned char* px = rec + (variant == CifarVariant::Cifar10 ? 1 : 2);
        float* dst = v + i * kCifarPixels;
        for (int j = 0; j < kCifarPixels; ++j) dst[j] = static_cast<float>(px[j]) / 255.0f;
    }
    normalize_in_place(data);
    return data;
}

Dataset load_cifar_dir(const std::string& dir, CifarVariant variant, bool train) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (variant == CifarVariant::Cifar10) {
        if (train) {
            for (int i = 1; i <= 5; ++i) {
                files.push_back((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
            }
        } else {
            files.push_back((fs::path(dir) / "test_batch.bin").string());
        }
    } else {
        files.push_back((fs::path(dir) / (train ? "train.bin" : "test.bin")).string());
    }
    for (const auto& f : files) {
        if (!fs::exists(f)) throw DataFormatError("missing dataset file " + f, 0);
    }

    // Concatenate raw records first so normalization sees the whole set.
    Dataset out;
    std::vector<float> all_pixels;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        const size_t record = variant == CifarVariant::Cifar10 ? 1 + kCifarPixels : 2 + kCifarPixels;
        if (bytes.empty() || bytes.size() % record != 0) {
            throw DataFormatError(f + ": length " + std::to_string(bytes.size()) +
                                      " is not a multiple of the record size " +
                                      std::to_string(record),
                                  (bytes.size() / record) * record);
        }
        const int64_t n = static_cast<int64_t>(bytes.size() / record);
        for (int64_t i = 0; i < n; ++i) {
            const unsigned char* rec = reinterpret_cast<const unsigned char*>(bytes.data()) +
                                       static_cast<size_t>(i) * record;
            out.labels.push_back(variant == CifarVariant::Cifar10 ? rec[0] : rec[1]);
            out.ids.push_back(static_cast<int64_t>(out.labels.size()) - 1);
            const unsigned char* px = rec + (variant == CifarVariant::Cifar10 ? 1 : 2);
            for (int j = 0; j < kCifarPixels; ++j) {
                all_pixels.push_back(static_cast<float>(px[j]) / 255.0f);
            }
        }
    }
    out.num_classes = variant == CifarVariant::Cifar10 ? 10 : 100;
    const int64_t n = static_cast<int64_t>(out.labels.size());
    out.images = Tensor<float>::from({n, 3, kCifarSize, kCifarSize}, std::move(all_pixels));
    normalize_in_place(out);
    return out;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.image_size < 4 || spec.samples_per_class < 1 ||
        spec.noise_levels.empty()) {
        throw ConfigError("synthetic spec: invalid sizes");
    }
    for (double nl : spec.noise_levels) {
        if (nl < 0.0 || nl > 1.0) throw ConfigError("synthetic spec: noise level outside [0,1]");
    }
    const int size = spec.image_size;
    const int64_t n = static_cast<int64_t>(spec.num_classes) * spec.samples_per_class;
    Dataset data;
    data.num_classes = spec.num_classes;
    data.images = Tensor<float>::zeros({n, 3, size, size});
    float* v = data.images.values().data();
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int j = 0; j < spec.samples_per_class; ++j) {
            const int64_t id = static_cast<int64_t>(cls) * spec.samples_per_class + j;
            const double noise =
                spec.noise_levels[static_cast<size_t>(j) % spec.noise_levels.size()];
            data.labels.push_back(cls);
            data.ids.push_back(id);
            data.noise.push_back(noise);
            // Per-sample stream keyed by (seed, id): generation order never
            // changes the pixels.
            Rng rng(mix_seed(spec.seed, "sample" + std::to_string(id)));
            float* img = v + id * 3 * size * size;
            for (int ch = 0; ch < 3; ++ch) {
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        double val = pattern_value(cls, ch, x, y, size);
                        if (noise > 0.0) val += rng.uniform(-noise, noise);
                        img[(ch * size + y) * size + x] =
                            static_cast<float>(std::clamp(val, 0.0, 1.0));
                    }
                }
            }
        }
    }
    normalize_in_place(data);
    return data;
}

void export_cifar_layout(const Dataset& data, const std::string& path) {
    if (!data.images.defined() || data.images.dim(1) != 3 || data.images.dim(2) != kCifarSize ||
        data.images.dim(3) != kCifarSize) {
        throw ContractError("export_cifar_layout: dataset is not 3x32x32");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataFormatError("cannot write " + path, 0);
    const float* v = data.images.values().data();
    for (int64_t i = 0; i < data.size(); ++i) {
        out.put(static_cast<char>(data.labels[static_cast<size_t>(i)]));
        for (int j = 0; j < kCifarPixels; ++j) {
            const int ch = j / (kCifarSize * kCifarSize);
            const double raw = v[i * kCifarPixels + j] * data.channel_std[static_cast<size_t>(ch)] +
                               data.channel_mean[static_cast<size_t>(ch)];
            const int byte = std::clamp(static_cast<int>(std::lround(raw * 255.0)), 0, 255);
            out.put(static_cast<char>(byte));
        }
    }
}

std::vector<std::vector<int64_t>> batches(int64_t dataset_size, int64_t batch_size, uint64_t seed) {
    if (batch_size < 1 || batch_size > dataset_size) {
        throw ContractError("batches: batch size " + std::to_string(batch_size) +
                            " for dataset of " + std::to_string(dataset_size));
    }
    std::vector<int64_t> order(static_cast<size_t>(dataset_size));
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with our own generator so the permutation is stable
    // across standard libraries.
    Rng rng(seed);
    for (int64_t i = dataset_size - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(i + 1));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    std::vector<std::vector<int64_t>> out;
    for (int64_t start = 0; start < dataset_size; start += batch_size) {
        const int64_t end = std::min(dataset_size, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

template <typename T>
Batch gather_batch(const Dataset& data, std::span<const int64_t> indices, Tensor<T>& out_images) {
    const int64_t c = data.images.dim(1), h = data.images.dim(2), w = data.images.dim(3);
    const int64_t stride = c * h * w;
    out_images = Tensor<T>::zeros({static_cast<int64_t>(indices.size()), c, h, w});
    T* dst = out_images.values().data();
    const float* src = data.images.values().data();
    Batch batch;
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t idx = indices[i];
        for (int64_t j = 0; j < stride; ++j) {
            dst[static_cast<int64_t>(i) * stride + j] = static_cast<T>(src[idx * stride + j]);
        }
        batch.labels.push_back(data.labels[static_cast<size_t>(idx)]);
        batch.ids.push_back(data.ids[static_cast<size_t>(idx)]);
    }
    return batch;
}

template Batch gather_batch<float>(const Dataset&, std::span<const int64_t>, Tensor<float>&);
template Batch gather_batch<double>(const Dataset&, std::span<const int64_t>, Tensor<double>&);

}  // namespace iamnn
