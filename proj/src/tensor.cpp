// SPDX-License-Identifier: Apache-2.0
#include "rebalance/tensor.hpp"

#include <sstream>

namespace rebalance {

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(t->size()), real(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

TensorPtr make_tensor(std::vector<int64_t> shape, std::vector<real> values,
                      bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  if (static_cast<int64_t>(values.size()) != t->size()) {
    throw ShapeError("tensor value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(t->shape));
  }
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  if (requires_grad) t->ensure_grad();
  return t;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->size() != 1) {
    throw ShapeError("backward expects a scalar loss, got " +
                     shape_str(loss->shape));
  }
  loss->ensure_grad();
  loss->grad[0] = real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace rebalance
