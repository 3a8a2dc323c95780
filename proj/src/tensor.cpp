#include "graphnav/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "graphnav/hash.hpp"
#include "graphnav/kernels.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace graphnav::tensor {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void ensure_grad(const Tensor& t) {
  if (t->requires_grad && t->grad.size() != t->value.size())
    t->grad.assign(t->value.size(), 0.0);
}

}  // namespace

double Node::scalar() const {
  if (numel() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
  return value[0];
}

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  require(n->rank() >= 1 && n->rank() <= 2, "tensors are rank 1 or 2");
  for (int d : n->shape) require(d > 0, "tensor dims must be positive");
  require(static_cast<int64_t>(values.size()) == n->numel(),
          "value count does not match shape");
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return n;
}

Tensor zeros(Shape shape, bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                     requires_grad);
}

Tensor full(Shape shape, double v, bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v),
                     requires_grad);
}

Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = stddev * rng.normal();
  return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Graph::out_like(Shape shape, bool requires_grad) {
  auto t = zeros(std::move(shape), false);
  t->requires_grad = recording_ && requires_grad;
  if (t->requires_grad) t->grad.assign(t->value.size(), 0.0);
  return t;
}

void Graph::check_finite(const Tensor& t, const char* op) {
  for (double v : t->value) {
    if (!std::isfinite(v))
      throw NumericalError(std::string("non-finite value in output of ") + op);
  }
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  require(a->rank() == 2 && b->rank() == 2, "matmul: rank-2 operands required");
  require(a->shape[1] == b->shape[0], "matmul: inner dimensions differ");
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  Tensor out = out_like({m, n}, a->requires_grad || b->requires_grad);
  kernels::matmul_nn(a->value.data(), b->value.data(), out->value.data(), m, k, n);
  check_finite(out, "matmul");
  if (out->requires_grad) {
    record([a, b, out, m, k, n] {
      if (a->requires_grad) {
        ensure_grad(a);
        kernels::matmul_nt_acc(out->grad.data(), b->value.data(), a->grad.data(), m, n, k);
        a->grad_ready = true;
      }
      if (b->requires_grad) {
        ensure_grad(b);
        kernels::matmul_tn_acc(a->value.data(), out->grad.data(), b->grad.data(), k, m, n);
        b->grad_ready = true;
      }
    });
  }
  return out;
}

Tensor Graph::matmul_nt(const Tensor& a, const Tensor& b) {
  require(a->rank() == 2 && b->rank() == 2, "matmul_nt: rank-2 operands required");
  require(a->shape[1] == b->shape[1], "matmul_nt: inner dimensions differ");
  const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
  Tensor out = out_like({m, n}, a->requires_grad || b->requires_grad);
  kernels::matmul_nt(a->value.data(), b->value.data(), out->value.data(), m, k, n);
  check_finite(out, "matmul_nt");
  if (out->requires_grad) {
    record([a, b, out, m, k, n] {
      if (a->requires_grad) {
        ensure_grad(a);
        kernels::matmul_nn_acc(out->grad.data(), b->value.data(), a->grad.data(), m, n, k);
        a->grad_ready = true;
      }
      if (b->requires_grad) {
        ensure_grad(b);
        kernels::matmul_tn_acc(out->grad.data(), a->value.data(), b->grad.data(), n, m, k);
        b->grad_ready = true;
      }
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  const bool same = a->shape == b->shape;
  const bool rowcast = a->rank() == 2 && b->rank() == 1 && a->shape[1] == b->shape[0];
  require(same || rowcast, "add: shapes must match or b must be a row-broadcast bias");
  Tensor out = out_like(a->shape, a->requires_grad || b->requires_grad);
  const size_t n = a->value.size();
  if (same) {
    for (size_t i = 0; i < n; ++i) out->value[i] = a->value[i] + b->value[i];
  } else {
    const size_t cols = static_cast<size_t>(a->shape[1]);
    for (size_t i = 0; i < n; ++i) out->value[i] = a->value[i] + b->value[i % cols];
  }
  check_finite(out, "add");
  if (out->requires_grad) {
    record([a, b, out, same, n] {
      if (a->requires_grad) {
        ensure_grad(a);
        for (size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        a->grad_ready = true;
      }
      if (b->requires_grad) {
        ensure_grad(b);
        if (same) {
          for (size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
        } else {
          const size_t cols = b->value.size();
          for (size_t i = 0; i < n; ++i) b->grad[i % cols] += out->grad[i];
        }
        b->grad_ready = true;
      }
    });
  }
  return out;
}

Tensor Graph::scale(const Tensor& a, double s) {
  Tensor out = out_like(a->shape, a->requires_grad);
  const size_t n = a->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = s * a->value[i];
  check_finite(out, "scale");
  if (out->requires_grad) {
    record([a, out, s, n] {
      ensure_grad(a);
      for (size_t i = 0; i < n; ++i) a->grad[i] += s * out->grad[i];
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  require(a->shape == b->shape, "mul: shapes must match");
  Tensor out = out_like(a->shape, a->requires_grad || b->requires_grad);
  const size_t n = a->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a->value[i] * b->value[i];
  check_finite(out, "mul");
  if (out->requires_grad) {
    record([a, b, out, n] {
      if (a->requires_grad) {
        ensure_grad(a);
        for (size_t i = 0; i < n; ++i) a->grad[i] += b->value[i] * out->grad[i];
        a->grad_ready = true;
      }
      if (b->requires_grad) {
        ensure_grad(b);
        for (size_t i = 0; i < n; ++i) b->grad[i] += a->value[i] * out->grad[i];
        b->grad_ready = true;
      }
    });
  }
  return out;
}

Tensor Graph::softmax(const Tensor& a) {
  const int rows = a->rows(), cols = a->cols();
  Tensor out = out_like(a->shape, a->requires_grad);
  for (int r = 0; r < rows; ++r) {
    const double* x = a->value.data() + static_cast<size_t>(r) * cols;
    double* y = out->value.data() + static_cast<size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx))
      throw NumericalError("softmax: row has no finite entry");
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);  // exp(-inf) == 0 exactly
      sum += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= sum;
  }
  check_finite(out, "softmax");
  if (out->requires_grad) {
    record([a, out, rows, cols] {
      ensure_grad(a);
      for (int r = 0; r < rows; ++r) {
        const double* y = out->value.data() + static_cast<size_t>(r) * cols;
        const double* dy = out->grad.data() + static_cast<size_t>(r) * cols;
        double* dx = a->grad.data() + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
      }
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                         double eps) {
  const int rows = a->rows(), cols = a->cols();
  require(gain->rank() == 1 && gain->shape[0] == cols, "layer_norm: gain length != cols");
  require(bias->rank() == 1 && bias->shape[0] == cols, "layer_norm: bias length != cols");
  Tensor out = out_like(a->shape, a->requires_grad || gain->requires_grad || bias->requires_grad);
  // Save per-row mean and inverse stddev for the backward pass.
  auto mu = std::make_shared<std::vector<double>>(rows);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (int r = 0; r < rows; ++r) {
    const double* x = a->value.data() + static_cast<size_t>(r) * cols;
    double* y = out->value.data() + static_cast<size_t>(r) * cols;
    double m = 0.0;
    for (int j = 0; j < cols; ++j) m += x[j];
    m /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (x[j] - m) * (x[j] - m);
    var /= cols;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*mu)[r] = m;
    (*rstd)[r] = rs;
    for (int j = 0; j < cols; ++j)
      y[j] = gain->value[j] * ((x[j] - m) * rs) + bias->value[j];
  }
  check_finite(out, "layer_norm");
  if (out->requires_grad) {
    record([a, gain, bias, out, mu, rstd, rows, cols] {
      for (int r = 0; r < rows; ++r) {
        const double* x = a->value.data() + static_cast<size_t>(r) * cols;
        const double* dy = out->grad.data() + static_cast<size_t>(r) * cols;
        const double m = (*mu)[r], rs = (*rstd)[r];
        if (gain->requires_grad) {
          ensure_grad(gain);
          for (int j = 0; j < cols; ++j) gain->grad[j] += dy[j] * ((x[j] - m) * rs);
          gain->grad_ready = true;
        }
        if (bias->requires_grad) {
          ensure_grad(bias);
          for (int j = 0; j < cols; ++j) bias->grad[j] += dy[j];
          bias->grad_ready = true;
        }
        if (a->requires_grad) {
          ensure_grad(a);
          double* dx = a->grad.data() + static_cast<size_t>(r) * cols;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double xhat = (x[j] - m) * rs;
            const double dxhat = dy[j] * gain->value[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          for (int j = 0; j < cols; ++j) {
            const double xhat = (x[j] - m) * rs;
            const double dxhat = dy[j] * gain->value[j];
            dx[j] += rs * (dxhat - sum_dxhat / cols - xhat * sum_dxhat_xhat / cols);
          }
          a->grad_ready = true;
        }
      }
    });
  }
  return out;
}

Tensor Graph::gelu(const Tensor& a) {
  Tensor out = out_like(a->shape, a->requires_grad);
  kernels::gelu_forward(a->value.data(), out->value.data(), a->value.size());
  check_finite(out, "gelu");
  if (out->requires_grad) {
    record([a, out] {
      ensure_grad(a);
      kernels::gelu_backward_acc(a->value.data(), out->grad.data(), a->grad.data(),
                                 a->value.size());
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::gather_rows(const Tensor& a, const std::vector<int>& ids) {
  require(a->rank() == 2, "gather_rows: rank-2 input required");
  require(!ids.empty(), "gather_rows: empty index list");
  const int rows = a->shape[0], cols = a->shape[1];
  for (int id : ids) require(id >= 0 && id < rows, "gather_rows: index out of range");
  Tensor out = out_like({static_cast<int>(ids.size()), cols}, a->requires_grad);
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out->value.data() + i * cols,
                a->value.data() + static_cast<size_t>(ids[i]) * cols,
                sizeof(double) * static_cast<size_t>(cols));
  if (out->requires_grad) {
    auto idx = std::make_shared<std::vector<int>>(ids);
    record([a, out, idx, cols] {
      ensure_grad(a);
      for (size_t i = 0; i < idx->size(); ++i) {
        const double* src = out->grad.data() + i * cols;
        double* dst = a->grad.data() + static_cast<size_t>((*idx)[i]) * cols;
        for (int j = 0; j < cols; ++j) dst[j] += src[j];
      }
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const int cols = parts[0]->cols();
  int rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p->cols() == cols, "concat_rows: column counts differ");
    rows += p->rows();
    rg = rg || p->requires_grad;
  }
  Tensor out = out_like({rows, cols}, rg);
  size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out->value.data() + off, p->value.data(), sizeof(double) * p->value.size());
    off += p->value.size();
  }
  if (rg) {
    record([parts, out] {
      size_t off2 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          ensure_grad(p);
          for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += out->grad[off2 + i];
          p->grad_ready = true;
        }
        off2 += p->value.size();
      }
    });
  }
  return out;
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const int rows = parts[0]->rows();
  int cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p->rank() == 2 && p->rows() == rows, "concat_cols: row counts differ");
    cols += p->cols();
    rg = rg || p->requires_grad;
  }
  Tensor out = out_like({rows, cols}, rg);
  int coff = 0;
  for (const auto& p : parts) {
    const int pc = p->cols();
    for (int r = 0; r < rows; ++r)
      std::memcpy(out->value.data() + static_cast<size_t>(r) * cols + coff,
                  p->value.data() + static_cast<size_t>(r) * pc,
                  sizeof(double) * static_cast<size_t>(pc));
    coff += pc;
  }
  if (rg) {
    record([parts, out, rows, cols] {
      int coff2 = 0;
      for (const auto& p : parts) {
        const int pc = p->cols();
        if (p->requires_grad) {
          ensure_grad(p);
          for (int r = 0; r < rows; ++r) {
            const double* src = out->grad.data() + static_cast<size_t>(r) * cols + coff2;
            double* dst = p->grad.data() + static_cast<size_t>(r) * pc;
            for (int j = 0; j < pc; ++j) dst[j] += src[j];
          }
          p->grad_ready = true;
        }
        coff2 += pc;
      }
    });
  }
  return out;
}

Tensor Graph::slice_rows(const Tensor& a, int r0, int r1) {
  require(a->rank() == 2, "slice_rows: rank-2 input required");
  require(0 <= r0 && r0 < r1 && r1 <= a->shape[0], "slice_rows: bad range");
  const int cols = a->shape[1];
  Tensor out = out_like({r1 - r0, cols}, a->requires_grad);
  std::memcpy(out->value.data(), a->value.data() + static_cast<size_t>(r0) * cols,
              sizeof(double) * out->value.size());
  if (out->requires_grad) {
    record([a, out, r0, cols] {
      ensure_grad(a);
      double* dst = a->grad.data() + static_cast<size_t>(r0) * cols;
      for (size_t i = 0; i < out->grad.size(); ++i) dst[i] += out->grad[i];
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::slice_cols(const Tensor& a, int c0, int c1) {
  require(a->rank() == 2, "slice_cols: rank-2 input required");
  require(0 <= c0 && c0 < c1 && c1 <= a->shape[1], "slice_cols: bad range");
  const int rows = a->shape[0], cols = a->shape[1], w = c1 - c0;
  Tensor out = out_like({rows, w}, a->requires_grad);
  for (int r = 0; r < rows; ++r)
    std::memcpy(out->value.data() + static_cast<size_t>(r) * w,
                a->value.data() + static_cast<size_t>(r) * cols + c0,
                sizeof(double) * static_cast<size_t>(w));
  if (out->requires_grad) {
    record([a, out, c0, rows, cols, w] {
      ensure_grad(a);
      for (int r = 0; r < rows; ++r) {
        const double* src = out->grad.data() + static_cast<size_t>(r) * w;
        double* dst = a->grad.data() + static_cast<size_t>(r) * cols + c0;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  require(n == a->numel(), "reshape: element count mismatch");
  Tensor out = out_like(std::move(shape), a->requires_grad);
  out->value = a->value;
  if (out->requires_grad) {
    record([a, out] {
      ensure_grad(a);
      for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& a) {
  Tensor out = out_like({1}, a->requires_grad);
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s;
  check_finite(out, "sum");
  if (out->requires_grad) {
    record([a, out] {
      ensure_grad(a);
      const double d = out->grad[0];
      for (auto& g : a->grad) g += d;
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a->numel());
  Tensor out = out_like({1}, a->requires_grad);
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s * inv;
  check_finite(out, "mean");
  if (out->requires_grad) {
    record([a, out, inv] {
      ensure_grad(a);
      const double d = out->grad[0] * inv;
      for (auto& g : a->grad) g += d;
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::cross_entropy_with_logits(const Tensor& logits, int target) {
  require(logits->rank() == 1 || logits->rows() == 1,
          "cross_entropy_with_logits: logits must be a single row");
  const int k = logits->cols();
  require(target >= 0 && target < k, "cross_entropy_with_logits: target out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) mx = std::max(mx, logits->value[j]);
  if (!std::isfinite(mx)) throw NumericalError("cross_entropy_with_logits: no finite logit");
  double sum = 0.0;
  for (int j = 0; j < k; ++j) sum += std::exp(logits->value[j] - mx);
  const double lse = mx + std::log(sum);
  Tensor out = out_like({1}, logits->requires_grad);
  out->value[0] = lse - logits->value[target];
  check_finite(out, "cross_entropy_with_logits");
  if (out->requires_grad) {
    record([logits, out, target, k, mx, sum] {
      ensure_grad(logits);
      const double d = out->grad[0];
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(logits->value[j] - mx) / sum;
        logits->grad[j] += d * (p - (j == target ? 1.0 : 0.0));
      }
      logits->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::entropy_from_logits(const Tensor& logits) {
  require(logits->rank() == 1 || logits->rows() == 1,
          "entropy_from_logits: logits must be a single row");
  const int k = logits->cols();
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) mx = std::max(mx, logits->value[j]);
  if (!std::isfinite(mx)) throw NumericalError("entropy_from_logits: no finite logit");
  double sum = 0.0;
  for (int j = 0; j < k; ++j) sum += std::exp(logits->value[j] - mx);
  const double lse = mx + std::log(sum);
  // H = lse - sum_j p_j * l_j
  double dot = 0.0;
  auto p = std::make_shared<std::vector<double>>(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    (*p)[static_cast<size_t>(j)] = std::exp(logits->value[j] - lse);
    dot += (*p)[static_cast<size_t>(j)] * logits->value[j];
  }
  Tensor out = out_like({1}, logits->requires_grad);
  out->value[0] = lse - dot;
  check_finite(out, "entropy_from_logits");
  if (out->requires_grad) {
    record([logits, out, p, lse, k] {
      ensure_grad(logits);
      const double d = out->grad[0];
      const double h = out->value[0];
      for (int j = 0; j < k; ++j) {
        const double logp = logits->value[j] - lse;
        logits->grad[j] += d * (-(*p)[static_cast<size_t>(j)] * (logp + h));
      }
      logits->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::masked_fill(const Tensor& a, const std::vector<uint8_t>& mask, double fill) {
  require(mask.size() == a->value.size(), "masked_fill: mask size mismatch");
  Tensor out = out_like(a->shape, a->requires_grad);
  for (size_t i = 0; i < mask.size(); ++i)
    out->value[i] = mask[i] ? fill : a->value[i];
  // No finite check here: -inf fill is the intended use (softmax turns those
  // positions into exact zeros).
  if (out->requires_grad) {
    auto m = std::make_shared<std::vector<uint8_t>>(mask);
    record([a, out, m] {
      ensure_grad(a);
      for (size_t i = 0; i < m->size(); ++i)
        if (!(*m)[i]) a->grad[i] += out->grad[i];
      a->grad_ready = true;
    });
  }
  return out;
}

Tensor Graph::dropout(const Tensor& a, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a->value.size());
  for (auto& m : *mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out = out_like(a->shape, a->requires_grad);
  for (size_t i = 0; i < a->value.size(); ++i) out->value[i] = a->value[i] * (*mask)[i];
  check_finite(out, "dropout");
  if (out->requires_grad) {
    record([a, out, mask] {
      ensure_grad(a);
      for (size_t i = 0; i < mask->size(); ++i) a->grad[i] += out->grad[i] * (*mask)[i];
      a->grad_ready = true;
    });
  }
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (steps_.empty()) throw std::logic_error("backward: tape is empty (no forward recorded)");
  if (loss->numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss->requires_grad)
    throw std::invalid_argument("backward: loss does not require grad");
  ensure_grad(loss);
  loss->grad[0] = 1.0;
  loss->grad_ready = true;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->back();
  steps_.clear();
}

// --- ParameterStore -------------------------------------------------------

Tensor ParameterStore::create(const std::string& name, Shape shape,
                              std::vector<double> values) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t = make_tensor(std::move(shape), std::move(values), true);
  index_[name] = entries_.size();
  entries_.push_back({name, t, std::vector<double>(t->value.size(), 0.0),
                      std::vector<double>(t->value.size(), 0.0)});
  return t;
}

Tensor ParameterStore::create_randn(const std::string& name, Shape shape, double stddev,
                                    Rng& rng) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = stddev * rng.normal();
  return create(name, std::move(shape), std::move(v));
}

Tensor ParameterStore::create_zeros(const std::string& name, Shape shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return create(name, std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor ParameterStore::create_full(const std::string& name, Shape shape, double v) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return create(name, std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return entries_[it->second].t;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) {
    std::fill(e.t->grad.begin(), e.t->grad.end(), 0.0);
    e.t->grad_ready = false;
  }
}

void ParameterStore::adam_step(double lr, double beta1, double beta2, double eps) {
  bool any_ready = false;
  for (const auto& e : entries_) any_ready = any_ready || e.t->grad_ready;
  if (!any_ready)
    throw std::logic_error("adam_step: no gradients populated (backward not run)");
  adam_step_ += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_step_));
  for (auto& e : entries_) {
    ensure_grad(e.t);
    double* th = e.t->value.data();
    const double* g = e.t->grad.data();
    for (size_t i = 0; i < e.t->value.size(); ++i) {
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g[i];
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      th[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      if (!std::isfinite(th[i]))
        throw NumericalError("adam_step: parameter went non-finite: " + e.name);
    }
  }
  zero_grads();
}

int64_t ParameterStore::total_numel() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.t->numel();
  return n;
}

uint64_t ParameterStore::value_checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    h = fnv1a(e.name, h);
    h = fnv1a(e.t->value.data(), e.t->value.size() * sizeof(double), h);
  }
  return h;
}

// --- checkpoint container --------------------------------------------------

namespace {

constexpr char kMagic[8] = {'G', 'N', 'A', 'V', 'C', 'K', 'P', '1'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::string& b, uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& b, uint64_t v) { b.append(reinterpret_cast<const char*>(&v), 8); }
void put_bytes(std::string& b, const void* p, size_t n) {
  b.append(static_cast<const char*>(p), n);
}
void put_str(std::string& b, const std::string& s) {
  put_u32(b, static_cast<uint32_t>(s.size()));
  b.append(s);
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}
  uint32_t u32() { return get<uint32_t>(); }
  uint64_t u64() { return get<uint64_t>(); }
  uint8_t u8() { return get<uint8_t>(); }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(double* out, size_t n) {
    need(n * sizeof(double));
    std::memcpy(out, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  size_t pos() const { return pos_; }

 private:
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(size_t n) {
    if (pos_ + n > buf_.size()) throw MissingInputError("checkpoint: truncated file");
  }
  const std::string& buf_;
  size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const CheckpointMeta& meta, bool overwrite) {
  if (!overwrite && std::filesystem::exists(path))
    throw ExistsError("refusing to overwrite existing checkpoint: " + path);
  std::string b;
  put_bytes(b, kMagic, 8);
  put_u32(b, kCheckpointVersion);
  put_u64(b, meta.config_hash);
  put_u32(b, static_cast<uint32_t>(meta.kv.size()));
  for (const auto& [k, v] : meta.kv) {
    put_str(b, k);
    put_str(b, v);
  }
  put_u32(b, static_cast<uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    put_str(b, e.name);
    b.push_back(0);  // dtype: f64
    put_u32(b, static_cast<uint32_t>(e.t->shape.size()));
    for (int d : e.t->shape) put_u64(b, static_cast<uint64_t>(d));
    put_bytes(b, e.t->value.data(), e.t->value.size() * sizeof(double));
    put_bytes(b, e.m.data(), e.m.size() * sizeof(double));
    put_bytes(b, e.v.data(), e.v.size() * sizeof(double));
  }
  put_u64(b, static_cast<uint64_t>(store.adam_steps_taken()));
  put_u64(b, fnv1a(b.data(), b.size()));
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  out.flush();
  if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

namespace {

CheckpointMeta parse_header(Reader& r) {
  char magic[8];
  for (int i = 0; i < 8; ++i) magic[i] = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw MissingInputError("checkpoint: bad magic (not a checkpoint file)");
  const uint32_t ver = r.u32();
  if (ver != kCheckpointVersion)
    throw MissingInputError("checkpoint: unsupported container version");
  CheckpointMeta meta;
  meta.config_hash = r.u64();
  const uint32_t n_meta = r.u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    meta.kv[k] = r.str();
  }
  return meta;
}

}  // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf);
  return parse_header(r);
}

CheckpointMeta load_checkpoint(const std::string& path, ParameterStore& store,
                               uint64_t expected_config_hash) {
  const std::string buf = read_file(path);
  if (buf.size() < 8 + 8) throw MissingInputError("checkpoint: truncated file");
  {
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (stored != fnv1a(buf.data(), buf.size() - 8))
      throw MissingInputError("checkpoint: checksum mismatch (corrupt file)");
  }
  Reader r(buf);
  CheckpointMeta meta = parse_header(r);
  if (expected_config_hash != 0 && meta.config_hash != expected_config_hash)
    throw ConfigError("checkpoint config hash mismatch: file carries " +
                      hex64(meta.config_hash) + ", run expects " +
                      hex64(expected_config_hash));
  const uint32_t n_tensors = r.u32();
  if (n_tensors != store.size())
    throw ConfigError("checkpoint: tensor count mismatch with model definition");
  for (auto& e : store.entries_mut()) {
    const std::string name = r.str();
    if (name != e.name)
      throw ConfigError("checkpoint: parameter order mismatch at " + e.name);
    if (r.u8() != 0) throw MissingInputError("checkpoint: unsupported dtype");
    const uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u64());
    if (shape != e.t->shape)
      throw ConfigError("checkpoint: shape mismatch for parameter " + e.name);
    r.doubles(e.t->value.data(), e.t->value.size());
    r.doubles(e.m.data(), e.m.size());
    r.doubles(e.v.data(), e.v.size());
  }
  store.set_adam_steps(static_cast<int64_t>(r.u64()));
  store.zero_grads();
  return meta;
}

}  // namespace graphnav::tensor
