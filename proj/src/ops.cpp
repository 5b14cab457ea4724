// SPDX-License-Identifier: Apache-2.0
#include "rebalance/ops.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace rebalance {

namespace {

constexpr real kGeluCoef = real(0.044715);

bool any_grad(std::initializer_list<TensorPtr> ts) {
  for (const auto& t : ts)
    if (t->requires_grad) return true;
  return false;
}

TensorPtr out_like(std::vector<int64_t> shape, bool requires_grad) {
  return make_tensor(std::move(shape), requires_grad);
}

void check_matrix(const TensorPtr& t, const char* who) {
  if (t->shape.size() != 2) {
    throw ShapeError(std::string(who) + " expects a rank-2 tensor, got " +
                     shape_str(t->shape));
  }
}

}  // namespace

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const int64_t m = a->shape[0], k = a->shape[1];
  if (b->shape[0] != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a->shape) +
                     " x " + shape_str(b->shape));
  }
  const int64_t n = b->shape[1];
  auto out = out_like({m, n}, any_grad({a, b}));
  const real* A = a->data.data();
  const real* B = b->data.data();
  real* C = out->data.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const real av = A[i * k + p];
      if (av == real(0)) continue;
      const real* brow = B + p * n;
      real* crow = C + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (out->requires_grad) {
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape.record([a, b, out, m, k, n]() {
      const real* dC = out->grad.data();
      if (a->requires_grad) {
        real* dA = a->grad.data();
        const real* B = b->data.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            real acc = 0;
            const real* dcrow = dC + i * n;
            const real* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
            dA[i * k + p] += acc;
          }
      }
      if (b->requires_grad) {
        real* dB = b->grad.data();
        const real* A = a->data.data();
        for (int64_t i = 0; i < m; ++i) {
          const real* dcrow = dC + i * n;
          for (int64_t p = 0; p < k; ++p) {
            const real av = A[i * k + p];
            if (av == real(0)) continue;
            real* dbrow = dB + p * n;
            for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
          }
        }
      }
    });
  }
  return out;
}

TensorPtr matmul_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_matrix(a, "matmul_nt");
  check_matrix(b, "matmul_nt");
  const int64_t m = a->shape[0], k = a->shape[1];
  if (b->shape[1] != k) {
    throw ShapeError("matmul_nt inner extents differ: " + shape_str(a->shape) +
                     " x " + shape_str(b->shape) + "^T");
  }
  const int64_t n = b->shape[0];
  auto out = out_like({m, n}, any_grad({a, b}));
  const real* A = a->data.data();
  const real* B = b->data.data();
  real* C = out->data.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      real acc = 0;
      const real* arow = A + i * k;
      const real* brow = B + j * k;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C[i * n + j] = acc;
    }
  if (out->requires_grad) {
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape.record([a, b, out, m, k, n]() {
      const real* dC = out->grad.data();
      if (a->requires_grad) {
        real* dA = a->grad.data();
        const real* B = b->data.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const real d = dC[i * n + j];
            if (d == real(0)) continue;
            const real* brow = B + j * k;
            real* darow = dA + i * k;
            for (int64_t p = 0; p < k; ++p) darow[p] += d * brow[p];
          }
      }
      if (b->requires_grad) {
        real* dB = b->grad.data();
        const real* A = a->data.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const real d = dC[i * n + j];
            if (d == real(0)) continue;
            const real* arow = A + i * k;
            real* dbrow = dB + j * k;
            for (int64_t p = 0; p < k; ++p) dbrow[p] += d * arow[p];
          }
      }
    });
  }
  return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) {
    throw ShapeError("add shape mismatch: " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  }
  auto out = out_like(a->shape, any_grad({a, b}));
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape.record([a, b, out]() {
      if (a->requires_grad)
        for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& b) {
  check_matrix(x, "add_bias");
  const int64_t n = x->shape[0], d = x->shape[1];
  if (b->size() != d) {
    throw ShapeError("add_bias width mismatch: " + shape_str(x->shape) +
                     " vs bias " + shape_str(b->shape));
  }
  auto out = out_like(x->shape, any_grad({x, b}));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out->data[i * d + j] = x->data[i * d + j] + b->data[j];
  if (out->requires_grad) {
    if (x->requires_grad) x->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape.record([x, b, out, n, d]() {
      if (x->requires_grad)
        for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j) b->grad[j] += out->grad[i * d + j];
    });
  }
  return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& x, real c) {
  auto out = out_like(x->shape, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = c * x->data[i];
  if (out->requires_grad) {
    x->ensure_grad();
    tape.record([x, out, c]() {
      for (size_t i = 0; i < out->grad.size(); ++i)
        x->grad[i] += c * out->grad[i];
    });
  }
  return out;
}

TensorPtr gelu(Tape& tape, const TensorPtr& x) {
  const real c = real(std::sqrt(2.0 / M_PI));
  auto out = out_like(x->shape, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i) {
    const real v = x->data[i];
    const real u = c * (v + kGeluCoef * v * v * v);
    out->data[i] = real(0.5) * v * (real(1) + std::tanh(u));
  }
  if (out->requires_grad) {
    x->ensure_grad();
    tape.record([x, out, c]() {
      for (size_t i = 0; i < out->grad.size(); ++i) {
        const real v = x->data[i];
        const real u = c * (v + kGeluCoef * v * v * v);
        const real t = std::tanh(u);
        const real du = c * (real(1) + real(3) * kGeluCoef * v * v);
        const real d = real(0.5) * (real(1) + t) +
                       real(0.5) * v * (real(1) - t * t) * du;
        x->grad[i] += d * out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr tanh_act(Tape& tape, const TensorPtr& x) {
  auto out = out_like(x->shape, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i)
    out->data[i] = std::tanh(x->data[i]);
  if (out->requires_grad) {
    x->ensure_grad();
    tape.record([x, out]() {
      for (size_t i = 0; i < out->grad.size(); ++i) {
        const real t = out->data[i];
        x->grad[i] += (real(1) - t * t) * out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, real eps) {
  if (x->shape.empty()) throw ShapeError("layer_norm on rank-0 tensor");
  const int64_t d = x->shape.back();
  if (gamma->size() != d || beta->size() != d) {
    throw ShapeError("layer_norm width mismatch: x " + shape_str(x->shape) +
                     ", gamma " + shape_str(gamma->shape) + ", beta " +
                     shape_str(beta->shape));
  }
  if (eps <= real(0)) throw ConfigError("layer_norm eps must be positive");
  const int64_t n = x->size() / d;
  auto out = out_like(x->shape, any_grad({x, gamma, beta}));
  // Cache normalized values and inverse stddev for backward.
  auto xhat = std::make_shared<std::vector<real>>(x->data.size());
  auto inv_std = std::make_shared<std::vector<real>>(n);
  for (int64_t i = 0; i < n; ++i) {
    const real* row = x->data.data() + i * d;
    real mean = 0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= real(d);
    real var = 0;
    for (int64_t j = 0; j < d; ++j) {
      const real c = row[j] - mean;
      var += c * c;
    }
    var /= real(d);
    const real istd = real(1) / std::sqrt(var + eps);
    (*inv_std)[i] = istd;
    for (int64_t j = 0; j < d; ++j) {
      const real h = (row[j] - mean) * istd;
      (*xhat)[i * d + j] = h;
      out->data[i * d + j] = h * gamma->data[j] + beta->data[j];
    }
  }
  if (out->requires_grad) {
    if (x->requires_grad) x->ensure_grad();
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    tape.record([x, gamma, beta, out, xhat, inv_std, n, d]() {
      for (int64_t i = 0; i < n; ++i) {
        const real* dy = out->grad.data() + i * d;
        const real* h = xhat->data() + i * d;
        if (gamma->requires_grad)
          for (int64_t j = 0; j < d; ++j) gamma->grad[j] += dy[j] * h[j];
        if (beta->requires_grad)
          for (int64_t j = 0; j < d; ++j) beta->grad[j] += dy[j];
        if (x->requires_grad) {
          real sum_g = 0, sum_gh = 0;
          for (int64_t j = 0; j < d; ++j) {
            const real g = dy[j] * gamma->data[j];
            sum_g += g;
            sum_gh += g * h[j];
          }
          const real istd = (*inv_std)[i];
          for (int64_t j = 0; j < d; ++j) {
            const real g = dy[j] * gamma->data[j];
            x->grad[i * d + j] +=
                istd * (g - sum_g / real(d) - h[j] * sum_gh / real(d));
          }
        }
      }
    });
  }
  return out;
}

TensorPtr gather_rows(Tape& tape, const TensorPtr& table,
                      const std::vector<int64_t>& ids) {
  check_matrix(table, "gather_rows");
  const int64_t v = table->shape[0], d = table->shape[1];
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) {
      throw IndexError("gather_rows id " + std::to_string(ids[i]) +
                       " at position " + std::to_string(i) +
                       " out of range [0," + std::to_string(v) + ")");
    }
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  auto out = out_like({n, d}, table->requires_grad);
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out->data.data() + i * d, table->data.data() + ids[i] * d,
                sizeof(real) * static_cast<size_t>(d));
  if (out->requires_grad) {
    table->ensure_grad();
    auto idx = std::make_shared<std::vector<int64_t>>(ids);
    tape.record([table, out, idx, n, d]() {
      for (int64_t i = 0; i < n; ++i) {
        real* trow = table->grad.data() + (*idx)[i] * d;
        const real* orow = out->grad.data() + i * d;
        for (int64_t j = 0; j < d; ++j) trow[j] += orow[j];
      }
    });
  }
  return out;
}

TensorPtr softmax_rows(Tape& tape, const TensorPtr& x) {
  check_matrix(x, "softmax_rows");
  const int64_t n = x->shape[0], d = x->shape[1];
  auto out = out_like(x->shape, x->requires_grad);
  for (int64_t i = 0; i < n; ++i) {
    const real* row = x->data.data() + i * d;
    real mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    real z = 0;
    for (int64_t j = 0; j < d; ++j) {
      const real e = std::exp(row[j] - mx);
      out->data[i * d + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < d; ++j) out->data[i * d + j] /= z;
  }
  if (out->requires_grad) {
    x->ensure_grad();
    tape.record([x, out, n, d]() {
      for (int64_t i = 0; i < n; ++i) {
        const real* p = out->data.data() + i * d;
        const real* dy = out->grad.data() + i * d;
        real dot = 0;
        for (int64_t j = 0; j < d; ++j) dot += p[j] * dy[j];
        for (int64_t j = 0; j < d; ++j)
          x->grad[i * d + j] += p[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

TensorPtr transpose(Tape& tape, const TensorPtr& x) {
  check_matrix(x, "transpose");
  const int64_t m = x->shape[0], n = x->shape[1];
  auto out = out_like({n, m}, x->requires_grad);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[j * m + i] = x->data[i * n + j];
  if (out->requires_grad) {
    x->ensure_grad();
    tape.record([x, out, m, n]() {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          x->grad[i * n + j] += out->grad[j * m + i];
    });
  }
  return out;
}

TensorPtr weighted_sum(Tape& tape, const std::vector<TensorPtr>& parts,
                       const TensorPtr& weights) {
  if (parts.empty()) throw ShapeError("weighted_sum over zero parts");
  const int64_t num = static_cast<int64_t>(parts.size());
  if (weights->size() != num) {
    throw ShapeError("weighted_sum expects " + std::to_string(num) +
                     " weights, got " + shape_str(weights->shape));
  }
  bool rg = weights->requires_grad;
  for (const auto& p : parts) {
    if (p->shape != parts[0]->shape) {
      throw ShapeError("weighted_sum part shape mismatch: " +
                       shape_str(p->shape) + " vs " +
                       shape_str(parts[0]->shape));
    }
    rg = rg || p->requires_grad;
  }
  auto out = out_like(parts[0]->shape, rg);
  for (int64_t l = 0; l < num; ++l) {
    const real w = weights->data[l];
    for (size_t i = 0; i < out->data.size(); ++i)
      out->data[i] += w * parts[l]->data[i];
  }
  if (out->requires_grad) {
    if (weights->requires_grad) weights->ensure_grad();
    for (const auto& p : parts)
      if (p->requires_grad) p->ensure_grad();
    auto ps = std::make_shared<std::vector<TensorPtr>>(parts);
    tape.record([ps, weights, out, num]() {
      for (int64_t l = 0; l < num; ++l) {
        const auto& p = (*ps)[l];
        if (weights->requires_grad) {
          real acc = 0;
          for (size_t i = 0; i < out->grad.size(); ++i)
            acc += p->data[i] * out->grad[i];
          weights->grad[l] += acc;
        }
        if (p->requires_grad) {
          const real w = weights->data[l];
          for (size_t i = 0; i < out->grad.size(); ++i)
            p->grad[i] += w * out->grad[i];
        }
      }
    });
  }
  return out;
}

TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits,
                                const std::vector<int64_t>& targets,
                                const std::vector<bool>& mask) {
  check_matrix(logits, "softmax_cross_entropy");
  const int64_t n = logits->shape[0], v = logits->shape[1];
  if (static_cast<int64_t>(targets.size()) != n) {
    throw ShapeError("softmax_cross_entropy expects " + std::to_string(n) +
                     " targets, got " + std::to_string(targets.size()));
  }
  if (!mask.empty() && static_cast<int64_t>(mask.size()) != n) {
    throw ShapeError("softmax_cross_entropy mask length mismatch");
  }
  std::vector<bool> sel = mask.empty() ? std::vector<bool>(n, true) : mask;
  int64_t supervised = 0;
  for (bool b : sel) supervised += b ? 1 : 0;
  if (supervised == 0) {
    throw StateError("softmax_cross_entropy: no supervised positions");
  }
  for (int64_t i = 0; i < n; ++i) {
    if (sel[i] && (targets[i] < 0 || targets[i] >= v)) {
      throw IndexError("softmax_cross_entropy target " +
                       std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " out of range [0," +
                       std::to_string(v) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<real>>(logits->data.size(), real(0));
  double loss_acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!sel[i]) continue;
    const real* row = logits->data.data() + i * v;
    real mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(double(row[j] - mx));
    const double logz = std::log(z) + double(mx);
    loss_acc += logz - double(row[targets[i]]);
    for (int64_t j = 0; j < v; ++j)
      (*probs)[i * v + j] = real(std::exp(double(row[j]) - logz));
  }
  auto out = out_like({1}, logits->requires_grad);
  out->data[0] = real(loss_acc / double(supervised));
  if (out->requires_grad) {
    logits->ensure_grad();
    auto tgt = std::make_shared<std::vector<int64_t>>(targets);
    auto selp = std::make_shared<std::vector<bool>>(std::move(sel));
    tape.record([logits, out, probs, tgt, selp, n, v, supervised]() {
      const real d = out->grad[0] / real(supervised);
      for (int64_t i = 0; i < n; ++i) {
        if (!(*selp)[i]) continue;
        real* g = logits->grad.data() + i * v;
        const real* p = probs->data() + i * v;
        for (int64_t j = 0; j < v; ++j) g[j] += d * p[j];
        g[(*tgt)[i]] -= d;
      }
    });
  }
  return out;
}

TensorPtr attention(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                    const TensorPtr& v, int64_t batch, int64_t seq_len,
                    int64_t heads, const std::vector<bool>& attn_mask) {
  check_matrix(q, "attention");
  const int64_t nt = batch * seq_len;
  const int64_t h = q->shape[1];
  if (q->shape != k->shape || q->shape != v->shape) {
    throw ShapeError("attention q/k/v shape mismatch");
  }
  if (q->shape[0] != nt) {
    throw ShapeError("attention rows " + std::to_string(q->shape[0]) +
                     " != batch*seq_len " + std::to_string(nt));
  }
  if (h % heads != 0) {
    throw ShapeError("attention width " + std::to_string(h) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  if (static_cast<int64_t>(attn_mask.size()) != nt) {
    throw ShapeError("attention mask length mismatch");
  }
  const int64_t hd = h / heads;
  const real sc = real(1) / std::sqrt(real(hd));
  auto out = out_like(q->shape, any_grad({q, k, v}));
  // Attention probabilities cached per (batch, head) for the backward pass.
  auto probs = std::make_shared<std::vector<real>>(
      static_cast<size_t>(batch * heads * seq_len * seq_len), real(0));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t a = 0; a < heads; ++a) {
      real* P = probs->data() + (b * heads + a) * seq_len * seq_len;
      for (int64_t i = 0; i < seq_len; ++i) {
        const real* qi = q->data.data() + (b * seq_len + i) * h + a * hd;
        real mx = -std::numeric_limits<real>::infinity();
        real* prow = P + i * seq_len;
        for (int64_t j = 0; j < seq_len; ++j) {
          const real* kj = k->data.data() + (b * seq_len + j) * h + a * hd;
          real s = 0;
          for (int64_t p = 0; p < hd; ++p) s += qi[p] * kj[p];
          s *= sc;
          if (!attn_mask[b * seq_len + j]) s += real(-1e9);
          prow[j] = s;
          mx = std::max(mx, s);
        }
        real z = 0;
        for (int64_t j = 0; j < seq_len; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        for (int64_t j = 0; j < seq_len; ++j) prow[j] /= z;
        real* oi = out->data.data() + (b * seq_len + i) * h + a * hd;
        for (int64_t j = 0; j < seq_len; ++j) {
          const real pij = prow[j];
          if (pij == real(0)) continue;
          const real* vj = v->data.data() + (b * seq_len + j) * h + a * hd;
          for (int64_t p = 0; p < hd; ++p) oi[p] += pij * vj[p];
        }
      }
    }
  }
  if (out->requires_grad) {
    if (q->requires_grad) q->ensure_grad();
    if (k->requires_grad) k->ensure_grad();
    if (v->requires_grad) v->ensure_grad();
    tape.record([q, k, v, out, probs, batch, seq_len, heads, hd, h, sc]() {
      std::vector<real> dP(static_cast<size_t>(seq_len) * seq_len);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t a = 0; a < heads; ++a) {
          const real* P = probs->data() + (b * heads + a) * seq_len * seq_len;
          // dV and dP
          for (int64_t i = 0; i < seq_len; ++i) {
            const real* doi = out->grad.data() + (b * seq_len + i) * h + a * hd;
            const real* prow = P + i * seq_len;
            real* dprow = dP.data() + i * seq_len;
            for (int64_t j = 0; j < seq_len; ++j) {
              const real* vj = v->data.data() + (b * seq_len + j) * h + a * hd;
              real acc = 0;
              for (int64_t p = 0; p < hd; ++p) acc += doi[p] * vj[p];
              dprow[j] = acc;
              if (v->requires_grad && prow[j] != real(0)) {
                real* dvj = v->grad.data() + (b * seq_len + j) * h + a * hd;
                for (int64_t p = 0; p < hd; ++p) dvj[p] += prow[j] * doi[p];
              }
            }
          }
          // dS = P * (dP - sum(dP*P)); then dQ, dK
          for (int64_t i = 0; i < seq_len; ++i) {
            const real* prow = P + i * seq_len;
            real* dprow = dP.data() + i * seq_len;
            real dot = 0;
            for (int64_t j = 0; j < seq_len; ++j) dot += prow[j] * dprow[j];
            for (int64_t j = 0; j < seq_len; ++j) {
              const real ds = prow[j] * (dprow[j] - dot) * sc;
              if (ds == real(0)) continue;
              const real* qi = q->data.data() + (b * seq_len + i) * h + a * hd;
              const real* kj = k->data.data() + (b * seq_len + j) * h + a * hd;
              if (q->requires_grad) {
                real* dqi = q->grad.data() + (b * seq_len + i) * h + a * hd;
                for (int64_t p = 0; p < hd; ++p) dqi[p] += ds * kj[p];
              }
              if (k->requires_grad) {
                real* dkj = k->grad.data() + (b * seq_len + j) * h + a * hd;
                for (int64_t p = 0; p < hd; ++p) dkj[p] += ds * qi[p];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace rebalance
