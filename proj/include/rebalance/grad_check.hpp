// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_GRAD_CHECK_HPP_
#define REBALANCE_GRAD_CHECK_HPP_

#include <functional>
#include <vector>

#include "rebalance/tensor.hpp"

namespace rebalance {

// Compares the reverse-mode gradient of a scalar-valued computation against
// central finite differences, coordinate by coordinate, over the given
// inputs. Returns the maximum relative error. The forward function must
// rebuild its graph on the provided tape from the current input values.
//
// Relative error per coordinate: |g_ad - g_fd| / max(|g_ad| + |g_fd|, floor).
double grad_check(
    const std::function<TensorPtr(Tape&)>& forward,
    const std::vector<TensorPtr>& inputs, double eps,
    double denom_floor = 1e-2);

}  // namespace rebalance

#endif  // REBALANCE_GRAD_CHECK_HPP_
