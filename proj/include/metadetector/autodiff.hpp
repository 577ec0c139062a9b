#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is a tape: every operation appends a node whose inputs were created
// earlier, so creation order is a topological order and backward() is a single
// reverse sweep. Parameters live outside the graph (in ModelParams) and are
// bound by pointer; backward() accumulates into their grad buffers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace metadet::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  // Scalar read for rank-0 or single-element tensors.
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad();

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

enum class OpKind {
  kConstant,
  kParameter,
  kMatmul,
  kAddBias,
  kAdd,
  kScale,
  kMulConst,
  kAffine,
  kLogClamped,
  kSum,
  kRelu,
  kSigmoid,
  kSoftmaxRows,
  kConvText,
  kMaxPoolFull,
  kConcatCols,
  kSliceRows,
  kReshape,
  kDropout,
  kGrl,
  kDetach,
  kEmbedding,
};

const char* op_name(OpKind kind);

// Handle to a node of one Graph. Only meaningful with the graph that made it.
struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor value);
  // Binds an external tensor. If it requires grad, backward() accumulates
  // into its grad buffer. The tensor must outlive the graph's backward pass.
  Var parameter(Tensor& param);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() seed w.r.t. this node.
  std::span<const double> grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const {
    return nodes_.at(v.id).inputs;
  }
  std::size_t size() const { return nodes_.size(); }
  std::mt19937_64& rng() { return rng_; }

  Var matmul(Var a, Var b);
  // x[m×n] + bias[n] broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var add(Var a, Var b);
  Var scale(Var x, double factor);
  // Elementwise product with a constant tensor of identical shape.
  Var mul_const(Var x, const Tensor& factor);
  // a*x + b elementwise.
  Var affine(Var x, double a, double b);
  // log(max(x, eps)); gradient is zero where the clamp is active.
  Var log_clamped(Var x, double eps);
  Var sum(Var x);

  Var relu(Var x);
  Var sigmoid(Var x);
  Var softmax_rows(Var x);

  // x[d×k] or batched x[B×d×k]; filters[n_c×d×h]; bias[n_c].
  // Output [n_c×(k−h+1)] or [B×n_c×(k−h+1)].
  Var conv_text(Var x, Var filters, Var bias);
  // c[n_c×L] → [n_c], or [B×n_c×L] → [B×n_c]. Ties go to the first index.
  Var max_pool_full(Var c);
  Var concat_cols(std::span<const Var> parts);
  Var slice_rows(Var x, std::size_t begin, std::size_t end);
  Var reshape(Var x, Shape shape);

  // Inverted dropout; identity when !training or rate == 0.
  Var dropout(Var x, double rate, bool training);
  // Identity forward; backward multiplies the upstream gradient by −lambda.
  Var grl(Var x, double lambda);
  // Identity forward; blocks all gradient.
  Var detach(Var x);

  // Looks up ids (batch×k, row-major) in table[|V|×d]; output [batch×d×k].
  // Row 0 (PAD) never receives gradient.
  Var embedding(Var table, std::span<const std::int32_t> ids,
                std::size_t batch, std::size_t k);

  // Accumulates ∂seed/∂leaf into every bound parameter that requires grad.
  void backward(Var seed);

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor* param = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void(Graph&, std::size_t)> backprop;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value,
           std::function<void(Graph&, std::size_t)> backprop);
  const Tensor& val(std::size_t id) const;
  std::span<double> grad_buf(std::size_t id);
  std::span<const double> upstream(std::size_t id) const {
    return nodes_[id].grad;
  }

  std::vector<Node> nodes_;
  std::mt19937_64 rng_;
};

}  // namespace metadet::ad
