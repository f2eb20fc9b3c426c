#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "adsf/rng.hpp"

namespace adsf {

// Dense row-major tensor of 64-bit floats.
struct TensorData {
  std::vector<int64_t> shape;
  std::vector<double> v;

  TensorData() = default;
  TensorData(std::vector<int64_t> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (numel_of(shape) != static_cast<int64_t>(v.size()))
      throw std::invalid_argument("tensor data does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  static TensorData zeros(std::vector<int64_t> s) {
    int64_t n = numel_of(s);
    return TensorData(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
  }

  static TensorData full(std::vector<int64_t> s, double value) {
    int64_t n = numel_of(s);
    return TensorData(std::move(s), std::vector<double>(static_cast<size_t>(n), value));
  }

  static TensorData scalar(double x) { return TensorData({1}, {x}); }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t last_dim() const { return shape.empty() ? 1 : shape.back(); }

  bool same_shape(const TensorData& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

// Named parameter with persistent gradient accumulator.
struct Param {
  std::string name;
  TensorData value;
  std::vector<double> grad;
  bool trainable = true;

  void zero_grad() { grad.assign(value.v.size(), 0.0); }
};

// Ordered parameter registry; registration order is the checkpoint and
// optimizer order, which keeps runs bit-reproducible.
class ParamSet {
 public:
  Param& create(std::string name, std::vector<int64_t> shape) {
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->value = TensorData::zeros(std::move(shape));
    p->grad.assign(p->value.v.size(), 0.0);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param& create_init(std::string name, std::vector<int64_t> shape, RngStream& rng,
                     double stddev) {
    Param& p = create(std::move(name), std::move(shape));
    for (double& x : p.value.v) x = rng.normal(0.0, stddev);
    return p;
  }

  std::vector<Param*> all() const {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Param*> trainable() const {
    std::vector<Param*> out;
    for (auto& p : params_) {
      if (p->trainable) out.push_back(p.get());
    }
    return out;
  }

  Param* find(const std::string& name) const {
    for (auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

class Graph;

// Handle to a node in a graph; cheap to copy.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  const TensorData& val() const;
};

// Tape of operations in topological order; backward walks it in reverse.
class Graph {
 public:
  struct Node {
    TensorData value;
    std::vector<double> grad;  // allocated lazily during backward
    bool needs_grad = false;
    Param* param = nullptr;  // leaf bound to a parameter
    std::vector<int> parents;
    std::function<void(Graph&, int)> backprop;  // pulls grad of node id into parents
  };

  Var leaf(Param& p);
  Var constant(TensorData t);

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  std::vector<double>& grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.v.size(), 0.0);
    return n.grad;
  }

  // Reverse-mode sweep from a scalar loss; parameter leaves accumulate into
  // Param::grad additively.
  void backward(Var loss);

  int add(TensorData value, std::vector<int> parents,
          std::function<void(Graph&, int)> backprop);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// ---- differentiable operations -------------------------------------------

Var add(Var a, Var b);                       // same shape
Var sub(Var a, Var b);                       // same shape
Var mul(Var a, Var b);                       // elementwise, same shape
Var scale(Var a, double c);
Var add_bias(Var x, Var b);                  // b broadcast over last axis
Var add_seq(Var x, Var p);                   // x[b,L,d] + p[L,d] per batch slice
Var matmul(Var a, Var b);                    // 2x2, 3x3 (batched), 3x2 (shared rhs)
Var matmul_nt(Var a, Var b);                 // a . b^T, 2x2 or batched 3x3
Var softmax_last(Var x);
Var layer_norm_last(Var x, Var gain, Var bias, double eps = 1e-5);
Var leaky_relu(Var x, double slope);
Var dropout(Var x, double rate, bool training, RngStream& rng);
Var sigmoid(Var x);
Var sum(Var x);                              // scalar
Var mean(Var x);                             // scalar
Var concat_last(const std::vector<Var>& xs);
Var slice_last(Var x, int64_t start, int64_t len);
Var embedding_lookup(Var table, const std::vector<int64_t>& indices,
                     std::vector<int64_t> index_shape);
Var masked_max_pool(Var x, const std::vector<uint8_t>& mask);  // [b,L,d] -> [b,d]
Var masked_avg_pool(Var x, const std::vector<uint8_t>& mask);  // [b,L,d] -> [b,d]
Var l2_normalize_rows(Var x, double eps = 1e-12);
Var bce_mean(Var p, const std::vector<double>& labels);        // clamp 1e-7
Var softmax_xent_rows(Var logits, const std::vector<int64_t>& targets);

struct BatchNormState {
  Param* running_mean = nullptr;  // non-trainable params so they checkpoint
  Param* running_var = nullptr;
  double momentum = 0.9;
  double eps = 1e-5;
};

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, bool training);

// ---- gradient checking ----------------------------------------------------

struct GradCheckFailure {
  std::string param;
  int64_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  int64_t checked = 0;
  std::vector<GradCheckFailure> failures;
  bool passed(double tol) const { return max_rel_error < tol; }
};

// Central finite differences against the analytic gradient of a scalar loss.
// `build` must construct a fresh graph each call and be deterministic.
GradCheckReport grad_check(const std::function<Var(Graph&)>& build,
                           const std::vector<Param*>& params, double eps = 1e-5,
                           double tol = 1e-4);

}  // namespace adsf
