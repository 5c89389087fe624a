// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace distill3d {

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over one parameter group. Moments are sized on the first step.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(std::span<double> params, std::span<const double> grad);
    /// Float storage: the update is computed in double and rounded back.
    void step(std::span<float> params, std::span<const double> grad);

    double lr() const noexcept { return config_.lr; }
    void set_lr(double lr) noexcept { config_.lr = lr; }
    std::int64_t steps() const noexcept { return t_; }

    void save(std::ostream& out) const;
    void load(std::istream& in);
    bool operator==(const Adam&) const = default;

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace distill3d
