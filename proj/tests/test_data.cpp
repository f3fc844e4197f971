#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "iamnn/data.hpp"
#include "iamnn/errors.hpp"

using namespace iamnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "iamnn_data_tests";
    fs::create_directories(dir);
    return dir / name;
}

// One cifar10 record: label byte + 3072 pixel bytes.
void append_record(std::ofstream& out, uint8_t label, uint8_t fill) {
    out.put(static_cast<char>(label));
    for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(fill + (i % 7)));
}

}  // namespace

TEST_CASE("cifar10 loader: labels read straight from the record byte") {
    auto path = temp_file("three_records.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        append_record(out, 0x06, 10);
        append_record(out, 0x00, 40);
        append_record(out, 0x09, 70);
    }
    auto data = load_cifar_file(path.string(), CifarVariant::Cifar10);
    REQUIRE(data.size() == 3);
    CHECK(data.labels[0] == 6);
    CHECK(data.labels[1] == 0);
    CHECK(data.labels[2] == 9);
    CHECK(data.images.shape() == std::vector<int64_t>({3, 3, 32, 32}));
}

TEST_CASE("cifar10 loader: a 10000-record batch file consumes exactly 30,730,000 bytes") {
    auto path = temp_file("full_batch.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        for (int i = 0; i < 10000; ++i) append_record(out, static_cast<uint8_t>(i % 10), i % 251);
    }
    CHECK(fs::file_size(path) == 30'730'000u);
    auto data = load_cifar_file(path.string(), CifarVariant::Cifar10);
    CHECK(data.size() == 10000);
}

TEST_CASE("cifar loader rejects files that are not a whole number of records") {
    auto path = temp_file("truncated.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        append_record(out, 1, 0);
        out.put(42);  // one stray byte
    }
    try {
        load_cifar_file(path.string(), CifarVariant::Cifar10);
        FAIL("expected DataFormatError");
    } catch (const DataFormatError& e) {
        CHECK(e.byte_offset() == 3073);
    }
}

TEST_CASE("cifar100 records carry two label bytes; the fine label is used") {
    auto path = temp_file("c100.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.put(3);   // coarse
        out.put(42);  // fine
        for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(i % 9));
    }
    auto data = load_cifar_file(path.string(), CifarVariant::Cifar100);
    REQUIRE(data.size() == 1);
    CHECK(data.labels[0] == 42);
    CHECK(data.num_classes == 100);
}

TEST_CASE("loading the same file twice yields identical tensors") {
    auto path = temp_file("repeat.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        for (int i = 0; i < 5; ++i) append_record(out, static_cast<uint8_t>(i), i * 31);
    }
    auto a = load_cifar_file(path.string(), CifarVariant::Cifar10);
    auto b = load_cifar_file(path.string(), CifarVariant::Cifar10);
    REQUIRE(a.images.numel() == b.images.numel());
    for (int64_t i = 0; i < a.images.numel(); ++i) {
        CHECK(a.images.values()[i] == b.images.values()[i]);
    }
}

TEST_CASE("loaded datasets are normalized to zero per-channel mean") {
    auto path = temp_file("norm.bin");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        for (int i = 0; i < 64; ++i) append_record(out, static_cast<uint8_t>(i % 10), i * 3);
    }
    auto data = load_cifar_file(path.string(), CifarVariant::Cifar10);
    const int64_t n = data.size(), hw = 32 * 32;
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (int64_t b = 0; b < n; ++b) {
            for (int64_t o = 0; o < hw; ++o) mean += data.images.values()[(b * 3 + c) * hw + o];
        }
        mean /= static_cast<double>(n * hw);
        CHECK(std::fabs(mean) < 1e-3);
    }
}

TEST_CASE("synthetic: zero noise makes same-class samples identical") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.image_size = 8;
    spec.samples_per_class = 4;
    spec.noise_levels = {0.0};
    spec.seed = 5;
    auto data = gen_synthetic(spec);
    const int64_t stride = 3 * 8 * 8;
    for (int64_t j = 0; j < stride; ++j) {
        CHECK(data.images.values()[0 * stride + j] == data.images.values()[1 * stride + j]);
    }
}

TEST_CASE("synthetic: identical seeds give bitwise identical datasets") {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.image_size = 10;
    spec.samples_per_class = 6;
    spec.noise_levels = {0.2, 0.6};
    spec.seed = 99;
    auto a = gen_synthetic(spec);
    auto b = gen_synthetic(spec);
    REQUIRE(a.images.numel() == b.images.numel());
    for (int64_t i = 0; i < a.images.numel(); ++i) {
        CHECK(a.images.values()[i] == b.images.values()[i]);
    }
    CHECK(a.noise == b.noise);
}

TEST_CASE("synthetic: noisy samples differ from clean samples of the same class") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.image_size = 8;
    spec.samples_per_class = 2;
    spec.noise_levels = {0.0, 0.5};  // sample 0 clean, sample 1 noisy
    spec.seed = 7;
    auto data = gen_synthetic(spec);
    CHECK(data.noise[0] == 0.0);
    CHECK(data.noise[1] == 0.5);
    const int64_t stride = 3 * 8 * 8;
    double mad = 0;
    for (int64_t j = 0; j < stride; ++j) {
        mad += std::fabs(data.images.values()[j] - data.images.values()[stride + j]);
    }
    CHECK(mad / stride > 0.0);
}

TEST_CASE("batches: sizes (4,4,2) for N=10, batch 4; the partial batch is kept") {
    auto idx = batches(10, 4, 1);
    REQUIRE(idx.size() == 3);
    CHECK(idx[0].size() == 4);
    CHECK(idx[1].size() == 4);
    CHECK(idx[2].size() == 2);
}

TEST_CASE("batches: the same seed gives the same order; one epoch is a permutation") {
    auto a = batches(23, 5, 77);
    auto b = batches(23, 5, 77);
    CHECK(a == b);
    std::set<int64_t> seen;
    for (const auto& batch : a) {
        for (int64_t i : batch) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == 23);

    auto c = batches(23, 5, 78);
    CHECK(a != c);
}

TEST_CASE("gather_batch pulls images, labels and ids aligned") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.image_size = 8;
    spec.samples_per_class = 3;
    spec.seed = 3;
    auto data = gen_synthetic(spec);
    const std::vector<int64_t> idx = {4, 0};
    Tensor<float> images;
    auto batch = gather_batch(data, idx, images);
    CHECK(images.shape() == std::vector<int64_t>({2, 3, 8, 8}));
    CHECK(batch.labels[0] == data.labels[4]);
    CHECK(batch.ids[0] == 4);
    CHECK(batch.ids[1] == 0);
    const int64_t stride = 3 * 8 * 8;
    for (int64_t j = 0; j < stride; ++j) {
        CHECK(images.values()[j] == data.images.values()[4 * stride + j]);
    }
}

TEST_CASE("synthetic datasets export to the cifar record layout and reload") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.image_size = 32;
    spec.samples_per_class = 4;
    spec.noise_levels = {0.1};
    spec.seed = 21;
    auto data = gen_synthetic(spec);
    auto path = temp_file("synth_export.bin");
    export_cifar_layout(data, path.string());
    CHECK(fs::file_size(path) == 12u * 3073u);
    auto reloaded = load_cifar_file(path.string(), CifarVariant::Cifar10);
    REQUIRE(reloaded.size() == data.size());
    for (int64_t i = 0; i < data.size(); ++i) CHECK(reloaded.labels[i] == data.labels[i]);
}
