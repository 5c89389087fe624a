// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace distill3d {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Fast self-test of the core invariants (gradients, oracles, extraction, kernels).
std::vector<CheckResult> run_invariant_checks();

}  // namespace distill3d
