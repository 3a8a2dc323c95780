#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphnav/errors.hpp"
#include "graphnav/rng.hpp"

// Minimal dense-tensor library with reverse-mode automatic differentiation.
//
// Tensors are row-major doubles of rank 1 or 2. A Graph is the tape: ops are
// methods on it, each records a backward closure, and backward() replays the
// closures in exact reverse order and then clears the tape. A Graph is
// single-threaded; independent Graphs may run concurrently.
//
// Broadcasting is deliberately narrow: add() accepts equal shapes or a rank-1
// bias broadcast over the rows of a rank-2 tensor. Nothing else broadcasts.
//
// Every op checks its output for NaN/Inf and throws NumericalError on a hit.
// The one exception is masked_fill, whose whole point is to place -inf
// before a softmax; softmax turns those entries into exact zeros.

namespace graphnav::tensor {

using Shape = std::vector<int>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value when requires_grad
  bool requires_grad = false;
  bool grad_ready = false;  // set once backward has accumulated into grad

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  double scalar() const;
};

using Tensor = std::shared_ptr<Node>;

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
Tensor zeros(Shape shape, bool requires_grad = false);
Tensor full(Shape shape, double v, bool requires_grad = false);
Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);

class Graph {
 public:
  // recording=false is inference mode: no tape, no grad buffers, outputs
  // never require grad. backward() on such a graph is an error.
  explicit Graph(bool recording = true) : recording_(recording) {}

  // a{m,k} * b{k,n} -> {m,n}
  Tensor matmul(const Tensor& a, const Tensor& b);
  // a{m,k} * b{n,k}^T -> {m,n}
  Tensor matmul_nt(const Tensor& a, const Tensor& b);
  // Equal shapes, or b rank-1 {n} broadcast over the rows of a {m,n}.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);
  // Elementwise product, equal shapes.
  Tensor mul(const Tensor& a, const Tensor& b);
  // Softmax along the last axis. Rows may contain -inf (from masked_fill);
  // those positions come out exactly 0. A row of all -inf is an error.
  Tensor softmax(const Tensor& a);
  // Per-row normalization with affine gain/bias (rank-1, length = cols).
  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);
  Tensor gelu(const Tensor& a);
  // table{V,d} rows selected by ids -> {len(ids), d}
  Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& a, int r0, int r1);
  Tensor slice_cols(const Tensor& a, int c0, int c1);
  Tensor gather_rows(const Tensor& a, const std::vector<int>& ids);
  // Same elements, new shape (element count must match).
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor sum(const Tensor& a);   // -> {1}
  Tensor mean(const Tensor& a);  // -> {1}
  // logits rank-1 {k} (or {1,k}); returns -log softmax(logits)[target] as {1}.
  Tensor cross_entropy_with_logits(const Tensor& logits, int target);
  // Shannon entropy of softmax(logits) as {1}; computed via the log-sum-exp
  // identity so it stays finite for any finite logits.
  Tensor entropy_from_logits(const Tensor& logits);
  // mask has one byte per element; nonzero selects positions replaced by fill.
  Tensor masked_fill(const Tensor& a, const std::vector<uint8_t>& mask, double fill);
  // Inverted dropout; rate 0 returns the input unchanged.
  Tensor dropout(const Tensor& a, double rate, Rng& rng);

  // Runs the tape backward from a scalar loss, accumulating into the grad of
  // every requires_grad tensor reachable from it, then clears the tape.
  void backward(const Tensor& loss);

  size_t n_recorded() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  struct Step {
    std::function<void()> back;
  };
  bool recording_ = true;
  std::vector<Step> steps_;

  Tensor out_like(Shape shape, bool requires_grad);
  void record(std::function<void()> back) { steps_.push_back({std::move(back)}); }
  static void check_finite(const Tensor& t, const char* op);
};

// Named parameter tensors plus Adam state. Names are unique, shapes fixed at
// creation, iteration order = insertion order (and checkpoint layout order).
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor t;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
  };

  Tensor create(const std::string& name, Shape shape, std::vector<double> values);
  Tensor create_randn(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor create_zeros(const std::string& name, Shape shape);
  Tensor create_full(const std::string& name, Shape shape, double v);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor get(const std::string& name) const;

  void zero_grads();
  // Adam with bias correction; zeroes grads afterward. Throws logic_error if
  // called before any backward pass has populated gradients.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  int64_t adam_steps_taken() const { return adam_step_; }
  size_t size() const { return entries_.size(); }
  int64_t total_numel() const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries_mut() { return entries_; }
  void set_adam_steps(int64_t n) { adam_step_ = n; }

  // FNV over parameter values only (not optimizer state); used to assert
  // that evaluation never mutates the model.
  uint64_t value_checksum() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
  int64_t adam_step_ = 0;
};

// Versioned binary checkpoint container. Little-endian doubles, content
// checksum at the end; save -> load -> save is byte-identical.
struct CheckpointMeta {
  uint64_t config_hash = 0;
  std::map<std::string, std::string> kv;
};

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const CheckpointMeta& meta, bool overwrite);
// Fills values and optimizer state of an already-constructed store (same
// names and shapes). expected_config_hash != 0 enforces a hash match.
CheckpointMeta load_checkpoint(const std::string& path, ParameterStore& store,
                               uint64_t expected_config_hash);
// Reads just the header metadata without touching any store.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace graphnav::tensor
