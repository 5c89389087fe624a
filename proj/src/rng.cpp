// SPDX-License-Identifier: Apache-2.0
#include "distill3d/rng.hpp"

#include <limits>
#include <sstream>

#include "distill3d/errors.hpp"

namespace distill3d {

std::string Rng::save_state() const {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    out << engine_ << ' ' << normal_;
    return out.str();
}

void Rng::restore_state(const std::string& state) {
    std::istringstream in(state);
    in.precision(std::numeric_limits<double>::max_digits10);
    in >> engine_ >> normal_;
    if (in.fail()) throw InvalidArgument("Rng: malformed state string");
}

}  // namespace distill3d
