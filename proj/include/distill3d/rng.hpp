// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace distill3d {

/// Seeded generator shared by camera sampling, timestep sampling and noise draws.
/// The full state (engine + cached normal variate) round-trips through a string.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    /// Integer in [lo, hi].
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal_(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    std::string save_state() const;
    void restore_state(const std::string& state);

    bool operator==(const Rng&) const = default;

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace distill3d
