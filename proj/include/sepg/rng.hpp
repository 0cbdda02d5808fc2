#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sepg/tensor.hpp"

namespace sepg {

// Deterministic random source. Gaussian draws use an explicit Box-Muller
// transform so sampled values depend only on the mt19937_64 stream, not on
// the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi); // inclusive bounds

    double normal(double mean = 0.0, double stddev = 1.0);

    Tensor normal_tensor(std::vector<int64_t> shape, double mean, double stddev);
    Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi);

    // Exact engine state round trip for checkpointing.
    std::string serialize_state() const;
    void restore_state(const std::string& state);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace sepg
