#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "iamnn/tensor.hpp"

namespace iamnn {

// Derives an independent stream seed from a global seed and a parameter
// name, so initial values do not depend on registration order or on how
// many tensors other modules create (shared conv weights stay identical
// when max_iterations changes).
uint64_t mix_seed(uint64_t seed, std::string_view name);

// mt19937_64 with a hand-rolled Box-Muller normal.  std::normal_distribution
// is implementation-defined; this keeps frozen test values portable.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal();

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
}

}  // namespace iamnn
