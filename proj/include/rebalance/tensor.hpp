// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_TENSOR_HPP_
#define REBALANCE_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rebalance/errors.hpp"

namespace rebalance {

#ifdef REBALANCE_DOUBLE
using real = double;
#else
using real = float;
#endif

// Dense row-major tensor. Gradient storage is allocated lazily when the
// tensor participates in a differentiable computation.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<real> data;
  std::vector<real> grad;
  bool requires_grad = false;

  int64_t size() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), real(0));
  }
  void zero_grad() { grad.assign(data.size(), real(0)); }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<int64_t> shape, std::vector<real> values,
                      bool requires_grad = false);

std::string shape_str(const std::vector<int64_t>& shape);

// Reverse-mode tape. Forward execution records one backward closure per
// primitive in topological order; backward() replays them in reverse,
// accumulating into Tensor::grad. Single-threaded.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates. loss must be scalar.
  void backward(const TensorPtr& loss);

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace rebalance

#endif  // REBALANCE_TENSOR_HPP_
