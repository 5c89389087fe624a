// SPDX-License-Identifier: Apache-2.0
#include "distill3d/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "distill3d/errors.hpp"
#include "distill3d/simd.hpp"

namespace distill3d {

void Adam::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) throw InvalidArgument("Adam: gradient size does not match parameters");
    if (m_.empty()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
    } else if (m_.size() != params.size()) {
        throw InvalidArgument("Adam: parameter group changed size");
    }
    ++t_;
    simd::AdamParams p;
    p.lr = config_.lr;
    p.beta1 = config_.beta1;
    p.beta2 = config_.beta2;
    p.eps = config_.eps;
    p.bias1 = 1.0 - std::pow(p.beta1, double(t_));
    p.bias2 = 1.0 - std::pow(p.beta2, double(t_));
    simd::adam_update(p, grad, m_, v_, params);
}

void Adam::step(std::span<float> params, std::span<const double> grad) {
    std::vector<double> tmp(params.begin(), params.end());
    step(std::span<double>(tmp), grad);
    for (std::size_t i = 0; i < tmp.size(); ++i) params[i] = static_cast<float>(tmp[i]);
}

void Adam::save(std::ostream& out) const {
    const std::uint64_t n = m_.size();
    out.write(reinterpret_cast<const char*>(&t_), sizeof t_);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(m_.data()), std::streamsize(n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(v_.data()), std::streamsize(n * sizeof(double)));
}

void Adam::load(std::istream& in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&t_), sizeof t_);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n > (std::uint64_t(1) << 32)) throw IoError("Adam: truncated optimizer state");
    m_.resize(n);
    v_.resize(n);
    in.read(reinterpret_cast<char*>(m_.data()), std::streamsize(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(v_.data()), std::streamsize(n * sizeof(double)));
    if (!in) throw IoError("Adam: truncated optimizer state");
}

}  // namespace distill3d
