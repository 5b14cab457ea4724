// SPDX-License-Identifier: Apache-2.0
#include "rebalance/grad_check.hpp"

#include <cmath>

namespace rebalance {

double grad_check(const std::function<TensorPtr(Tape&)>& forward,
                  const std::vector<TensorPtr>& inputs, double eps,
                  double denom_floor) {
  // Analytic gradients.
  for (const auto& t : inputs) {
    t->requires_grad = true;
    t->ensure_grad();
    t->zero_grad();
  }
  Tape tape;
  TensorPtr loss = forward(tape);
  if (!std::isfinite(double(loss->data[0]))) {
    throw NumericError("grad_check: non-finite loss value");
  }
  tape.backward(loss);

  auto eval = [&]() -> double {
    Tape t;
    TensorPtr l = forward(t);
    const double v = double(l->data[0]);
    if (!std::isfinite(v)) {
      throw NumericError("grad_check: non-finite intermediate value");
    }
    return v;
  };

  double max_rel = 0.0;
  for (const auto& t : inputs) {
    for (size_t i = 0; i < t->data.size(); ++i) {
      const real orig = t->data[i];
      t->data[i] = real(double(orig) + eps);
      const double fp = eval();
      t->data[i] = real(double(orig) - eps);
      const double fm = eval();
      t->data[i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = double(t->grad[i]);
      const double denom = std::max(std::abs(ad) + std::abs(fd), denom_floor);
      max_rel = std::max(max_rel, std::abs(ad - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace rebalance
