#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "getam/tensor.hpp"

namespace getam {

using NodeId = std::uint32_t;

class Tape;

/// Raised when a Var outlives the tape state it was recorded on, or when
/// backward is called on something other than a scalar.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const;
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const;

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  NodeId id_ = 0;
  std::uint64_t generation_ = 0;
};

enum class OpKind {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddScalar,
  kScale,
  kRelu,
  kPower,
  kGelu,
  kSoftmaxRows,
  kLayerNorm,
  kLinear,
  kMeanRows,
  kGather,
  kConcat,
  kReshape,
  kSum,
  kBceWithLogits,
  kSoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

/// Gradient buffers handed to an op's backward function. `input(k)` is empty
/// when input k does not require a gradient.
class GradientSink {
 public:
  std::span<double> input(std::size_t k) { return inputs_[k]; }
  const Tensor& input_value(std::size_t k) const { return *values_[k]; }
  const Tensor& output_value() const { return *output_; }

 private:
  friend class Tape;
  std::vector<std::span<double>> inputs_;
  std::vector<const Tensor*> values_;
  const Tensor* output_ = nullptr;
};

/// Records operations for reverse-mode differentiation.
///
/// Gradients are accumulated into leaves that require them and into interior
/// nodes registered with retain(). Repeated backward() calls accumulate;
/// clear_gradients() resets every stored gradient. reset() drops all nodes and
/// invalidates outstanding Vars.
///
/// Not thread-safe. One tape per model instance.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out, GradientSink& sink)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. Used by the op implementations.
  Var record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void retain(const Var& v);
  bool is_retained(const Var& v) const;

  void backward(const Var& root);
  void clear_gradients();

  bool has_grad(const Var& v) const;
  /// Throws TapeError when no gradient is stored for v.
  Tensor grad(const Var& v) const;
  bool requires_grad(const Var& v) const;
  OpKind kind(const Var& v) const;

  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    OpKind kind = OpKind::kLeaf;
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;
  };

  const Node& node(const Var& v) const;
  Node& node(const Var& v);
  void check(const Var& v) const;

  std::vector<Node> nodes_;
  std::unordered_set<NodeId> retained_;
  std::uint64_t generation_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All operands must live on the same tape.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, double s);
Var scale(const Var& a, double s);
/// Subgradient at exactly 0 is 0.
Var relu(const Var& a);
Var power(const Var& a, double exponent);
/// Exact (erf) GELU.
Var gelu(const Var& a);

enum class ElementwiseKind { kAdd, kMul, kRelu, kScale, kPower };
Var elementwise(ElementwiseKind kind, const Var& a, const Var& b);
Var elementwise(ElementwiseKind kind, const Var& a, double s);

Var softmax_rows(const Var& a);

inline constexpr double kLayerNormEps = 1e-5;
/// Per-row normalization, then row-wise affine with gamma/beta of length d.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps);
Var layer_norm(const Var& x, double eps = kLayerNormEps);

/// x[m,k] * w[k,p] + b[p] added to every row.
Var linear(const Var& x, const Var& w, const Var& b);
Var linear(const Var& x, const Var& w);

/// Mean over rows: [m,d] -> [1,d]. Global average pooling over tokens.
Var mean_rows(const Var& x);

/// out[i] = x[indices[i]], reshaped to `shape`. Backward scatters-adds.
Var gather(const Var& x, std::vector<std::size_t> indices, Shape shape);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var select(const Var& x, std::size_t flat_index);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(const Var& x, Shape shape);
Var sum(const Var& x);

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Var bce_with_logits(const Var& logits, const Tensor& targets);
/// Softmax cross-entropy over the channel axis of logits[K, P]. Entries of
/// `labels` equal to `ignore_label` are excluded; the mean is over the remaining
/// pixels, and the loss is 0 when none remain.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                          int ignore_label = 255);

/// Copy of the value as a new constant leaf (gradient stops here).
Var detach(const Var& x);

}  // namespace getam
