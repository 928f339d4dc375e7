#include "getam/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

namespace getam {

namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void require_same_shape(const Var& a, const Var& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank2(const Var& a, std::string_view op) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_to_string(a.shape()));
  }
}

Tape& common_tape(std::span<const Var> vars, std::string_view op) {
  Tape& t = vars.front().tape();
  for (const auto& v : vars) {
    if (&v.tape() != &t) throw TapeError(std::string(op) + ": operands live on different tapes");
  }
  return t;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kPower: return "power";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kLinear: return "linear";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kGather: return "gather";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kBceWithLogits: return "bce_with_logits";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Var / Tape

Tape& Var::tape() const {
  if (tape_ == nullptr) throw TapeError("uninitialized Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().node(*this).value; }

bool Var::valid() const {
  return tape_ != nullptr && generation_ == tape_->generation_ && id_ < tape_->nodes_.size();
}

Tape::Tape() : generation_(next_generation()) {}

void Tape::check(const Var& v) const {
  if (v.tape_ != this) throw TapeError("Var belongs to a different tape");
  if (v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw TapeError("stale Var: tape was reset after it was recorded");
  }
}

const Tape::Node& Tape::node(const Var& v) const {
  check(v);
  return nodes_[v.id_];
}

Tape::Node& Tape::node(const Var& v) {
  check(v);
  return nodes_[v.id_];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1), generation_);
}

Var Tape::record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    check(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1), generation_);
}

void Tape::retain(const Var& v) {
  check(v);
  retained_.insert(v.id_);
}

bool Tape::is_retained(const Var& v) const {
  check(v);
  return retained_.contains(v.id_);
}

void Tape::backward(const Var& root) {
  const Node& r = node(root);
  if (r.value.size() != 1) {
    throw TapeError("backward root must be a scalar, got shape " + shape_to_string(r.value.shape()));
  }
  // Per-pass buffers; only leaves and retained nodes keep theirs afterwards.
  std::vector<std::optional<std::vector<double>>> pass(root.id_ + 1);
  pass[root.id_] = std::vector<double>(1, 1.0);

  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    auto& g = pass[i];
    if (!g) continue;
    Node& n = nodes_[i];
    if (!n.requires_grad) {
      g.reset();
      continue;
    }
    if (n.backward) {
      GradientSink sink;
      sink.output_ = &n.value;
      for (NodeId in : n.inputs) {
        Node& src = nodes_[in];
        sink.values_.push_back(&src.value);
        if (src.requires_grad) {
          if (!pass[in]) pass[in] = std::vector<double>(src.value.size(), 0.0);
          sink.inputs_.emplace_back(*pass[in]);
        } else {
          sink.inputs_.emplace_back();
        }
      }
      n.backward(*g, sink);
    }
    if (n.kind == OpKind::kLeaf || retained_.contains(static_cast<NodeId>(i))) {
      if (!n.grad) {
        n.grad = std::move(*g);
      } else {
        for (std::size_t k = 0; k < g->size(); ++k) (*n.grad)[k] += (*g)[k];
      }
    }
    g.reset();
  }
}

void Tape::clear_gradients() {
  for (auto& n : nodes_) n.grad.reset();
}

bool Tape::has_grad(const Var& v) const { return node(v).grad.has_value(); }

Tensor Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (!n.grad) throw TapeError("no gradient stored for node " + std::to_string(v.id_));
  return Tensor(n.value.shape(), *n.grad);
}

bool Tape::requires_grad(const Var& v) const { return node(v).requires_grad; }

OpKind Tape::kind(const Var& v) const { return node(v).kind; }

void Tape::reset() {
  nodes_.clear();
  retained_.clear();
  generation_ = next_generation();
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
  if (B.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_to_string(A.shape()) + " x " +
                         shape_to_string(B.shape()));
  }
  Tensor C({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = A[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) C[i * p + j] += av * B[l * p + j];
    }
  }
  const Var ins[] = {a, b};
  return common_tape(ins, "matmul")
      .record(OpKind::kMatMul, std::move(C), ins,
              [m, k, p](std::span<const double> gc, GradientSink& s) {
                const auto& A = s.input_value(0);
                const auto& B = s.input_value(1);
                if (auto ga = s.input(0); !ga.empty()) {  // dA = dC * B^T
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < p; ++j) acc += gc[i * p + j] * B[l * p + j];
                      ga[i * k + l] += acc;
                    }
                }
                if (auto gb = s.input(1); !gb.empty()) {  // dB = A^T * dC
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                      const double av = A[i * k + l];
                      if (av == 0.0) continue;
                      for (std::size_t j = 0; j < p; ++j) gb[l * p + j] += av * gc[i * p + j];
                    }
                }
              });
}

Var transpose(const Var& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<std::size_t> idx(m * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) idx[j * m + i] = i * n + j;
  return gather(a, std::move(idx), {n, m});
}

namespace {

Var binary_elementwise(OpKind kind, const Var& a, const Var& b, std::string_view name) {
  require_same_shape(a, b, name);
  const auto& A = a.value();
  const auto& B = b.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    switch (kind) {
      case OpKind::kAdd: out[i] = A[i] + B[i]; break;
      case OpKind::kSub: out[i] = A[i] - B[i]; break;
      default: out[i] = A[i] * B[i]; break;
    }
  }
  const Var ins[] = {a, b};
  return common_tape(ins, name).record(
      kind, std::move(out), ins, [kind](std::span<const double> g, GradientSink& s) {
        auto ga = s.input(0);
        auto gb = s.input(1);
        const auto& A = s.input_value(0);
        const auto& B = s.input_value(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case OpKind::kAdd:
              if (!ga.empty()) ga[i] += g[i];
              if (!gb.empty()) gb[i] += g[i];
              break;
            case OpKind::kSub:
              if (!ga.empty()) ga[i] += g[i];
              if (!gb.empty()) gb[i] -= g[i];
              break;
            default:
              if (!ga.empty()) ga[i] += g[i] * B[i];
              if (!gb.empty()) gb[i] += g[i] * A[i];
              break;
          }
        }
      });
}

/// Pointwise unary op given value and derivative functions of the input.
template <typename F, typename DF>
Var unary(OpKind kind, const Var& a, F f, DF df) {
  const auto& A = a.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  const Var ins[] = {a};
  return a.tape().record(kind, std::move(out), ins,
                         [df](std::span<const double> g, GradientSink& s) {
                           auto ga = s.input(0);
                           const auto& A = s.input_value(0);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(A[i]);
                         });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary_elementwise(OpKind::kAdd, a, b, "add"); }
Var sub(const Var& a, const Var& b) { return binary_elementwise(OpKind::kSub, a, b, "sub"); }
Var mul(const Var& a, const Var& b) { return binary_elementwise(OpKind::kMul, a, b, "mul"); }

Var add(const Var& a, double s) {
  return unary(
      OpKind::kAddScalar, a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var scale(const Var& a, double s) {
  return unary(
      OpKind::kScale, a, [s](double x) { return x * s; }, [s](double) { return s; });
}

Var relu(const Var& a) {
  return unary(
      OpKind::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var power(const Var& a, double e) {
  return unary(
      OpKind::kPower, a, [e](double x) { return std::pow(x, e); },
      [e](double x) { return e == 0.0 ? 0.0 : e * std::pow(x, e - 1.0); });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      OpKind::kGelu, a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt2pi](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Var elementwise(ElementwiseKind kind, const Var& a, const Var& b) {
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, b);
    case ElementwiseKind::kMul: return mul(a, b);
    case ElementwiseKind::kRelu: return relu(a);
    default: break;
  }
  if (b.value().size() != 1) {
    throw DimensionError("elementwise: scale/power take a scalar operand, got " +
                         shape_to_string(b.shape()));
  }
  return elementwise(kind, a, b.value()[0]);
}

Var elementwise(ElementwiseKind kind, const Var& a, double s) {
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, s);
    case ElementwiseKind::kMul:
    case ElementwiseKind::kScale: return scale(a, s);
    case ElementwiseKind::kRelu: return relu(a);
    case ElementwiseKind::kPower: return power(a, s);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

Var softmax_rows(const Var& a) {
  require_rank2(a, "softmax_rows");
  const auto& A = a.value();
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, A[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(A[i * n + j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  const Var ins[] = {a};
  return a.tape().record(OpKind::kSoftmaxRows, std::move(out), ins,
                         [m, n](std::span<const double> g, GradientSink& s) {
                           auto ga = s.input(0);
                           const auto& Y = s.output_value();
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * Y[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] += Y[i * n + j] * (g[i * n + j] - dot);
                           }
                         });
}

namespace {

struct RowStats {
  std::vector<double> mean, inv_std;
};

RowStats row_stats(const Tensor& X, double eps) {
  const std::size_t m = X.dim(0), d = X.dim(1);
  RowStats st{std::vector<double>(m), std::vector<double>(m)};
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += X[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (X[i * d + j] - mu) * (X[i * d + j] - mu);
    var /= static_cast<double>(d);
    st.mean[i] = mu;
    st.inv_std[i] = 1.0 / std::sqrt(var + eps);
  }
  return st;
}

Var layer_norm_impl(const Var& x, const Var* gamma, const Var* beta, double eps) {
  require_rank2(x, "layer_norm");
  const auto& X = x.value();
  const std::size_t m = X.dim(0), d = X.dim(1);
  if (gamma && (gamma->value().size() != d || beta->value().size() != d)) {
    throw DimensionError("layer_norm: affine parameters " + shape_to_string(gamma->shape()) +
                         "/" + shape_to_string(beta->shape()) + " do not match width " +
                         std::to_string(d));
  }
  const RowStats st = row_stats(X, eps);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (X[i * d + j] - st.mean[i]) * st.inv_std[i];
      out[i * d + j] = gamma ? xh * gamma->value()[j] + beta->value()[j] : xh;
    }
  std::vector<Var> ins{x};
  if (gamma) {
    ins.push_back(*gamma);
    ins.push_back(*beta);
  }
  const bool affine = gamma != nullptr;
  return x.tape().record(
      OpKind::kLayerNorm, std::move(out), ins,
      [m, d, st, affine](std::span<const double> g, GradientSink& s) {
        const auto& X = s.input_value(0);
        auto gx = s.input(0);
        std::vector<double> dxh(d), xh(d);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (X[i * d + j] - st.mean[i]) * st.inv_std[i];
            dxh[j] = affine ? g[i * d + j] * s.input_value(1)[j] : g[i * d + j];
            mean_dxh += dxh[j];
            mean_dxh_xh += dxh[j] * xh[j];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          if (!gx.empty()) {
            for (std::size_t j = 0; j < d; ++j)
              gx[i * d + j] += st.inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
          }
          if (affine) {
            auto gg = s.input(1);
            auto gbeta = s.input(2);
            for (std::size_t j = 0; j < d; ++j) {
              if (!gg.empty()) gg[j] += g[i * d + j] * xh[j];
              if (!gbeta.empty()) gbeta[j] += g[i * d + j];
            }
          }
        }
      });
}

}  // namespace

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  return layer_norm_impl(x, &gamma, &beta, eps);
}

Var layer_norm(const Var& x, double eps) { return layer_norm_impl(x, nullptr, nullptr, eps); }

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  if (x.shape()[1] != w.shape()[0] || b.value().size() != w.shape()[1]) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + ", weight " +
                         shape_to_string(w.shape()) + ", bias " + shape_to_string(b.shape()));
  }
  const std::size_t m = x.shape()[0], p = w.shape()[1];
  Var y = matmul(x, w);
  // Row-broadcast bias: dedicated node so general broadcasting stays unsupported.
  Tensor out = y.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] += B[j];
  const Var ins[] = {y, b};
  return common_tape(ins, "linear")
      .record(OpKind::kLinear, std::move(out), ins,
              [m, p](std::span<const double> g, GradientSink& s) {
                if (auto gy = s.input(0); !gy.empty())
                  for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
                if (auto gb = s.input(1); !gb.empty())
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j) gb[j] += g[i * p + j];
              });
}

Var linear(const Var& x, const Var& w) { return matmul(x, w); }

Var mean_rows(const Var& x) {
  require_rank2(x, "mean_rows");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (m == 0) throw DimensionError("mean_rows: no rows");
  const auto& X = x.value();
  Tensor out({1, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += X[i * d + j];
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(m);
  const Var ins[] = {x};
  return x.tape().record(OpKind::kMeanRows, std::move(out), ins,
                         [m, d](std::span<const double> g, GradientSink& s) {
                           auto gx = s.input(0);
                           const double inv = 1.0 / static_cast<double>(m);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
                         });
}

Var gather(const Var& x, std::vector<std::size_t> indices, Shape shape) {
  if (shape_numel(shape) != indices.size()) {
    throw DimensionError("gather: " + std::to_string(indices.size()) +
                         " indices do not fill shape " + shape_to_string(shape));
  }
  const auto& X = x.value();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= X.size()) {
      throw DimensionError("gather: index " + std::to_string(indices[i]) + " out of range for " +
                           shape_to_string(X.shape()));
    }
    out[i] = X[indices[i]];
  }
  const Var ins[] = {x};
  return x.tape().record(OpKind::kGather, std::move(out), ins,
                         [idx = std::move(indices)](std::span<const double> g, GradientSink& s) {
                           auto gx = s.input(0);
                           for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
                         });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin > end || end > m) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_to_string(x.shape()));
  }
  std::vector<std::size_t> idx((end - begin) * n);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin * n + i;
  return gather(x, std::move(idx), {end - begin, n});
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<std::size_t> idx(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) idx[i * w + j] = i * n + begin + j;
  return gather(x, std::move(idx), {m, w});
}

Var select(const Var& x, std::size_t flat_index) { return gather(x, {flat_index}, {1}); }

namespace {

Var concat_impl(std::span<const Var> parts, bool rows) {
  const char* name = rows ? "concat_rows" : "concat_cols";
  if (parts.empty()) throw DimensionError(std::string(name) + ": no operands");
  for (const auto& p : parts) require_rank2(p, name);
  const std::size_t fixed = rows ? parts[0].shape()[1] : parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = rows ? p.shape()[1] : p.shape()[0];
    if (f != fixed) {
      throw DimensionError(std::string(name) + ": shape mismatch " +
                           shape_to_string(parts[0].shape()) + " vs " + shape_to_string(p.shape()));
    }
    total += rows ? p.shape()[0] : p.shape()[1];
  }
  Shape shape = rows ? Shape{total, fixed} : Shape{fixed, total};
  Tensor out(shape);
  // offsets[k] = first row (or column) of part k in the output
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto& P = p.value();
    const std::size_t pr = P.dim(0), pc = P.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        if (rows)
          out[(off + i) * fixed + j] = P[i * pc + j];
        else
          out[i * total + off + j] = P[i * pc + j];
      }
    off += rows ? pr : pc;
  }
  return common_tape(parts, name)
      .record(OpKind::kConcat, std::move(out), parts,
              [offsets, rows, total, fixed](std::span<const double> g, GradientSink& s) {
                for (std::size_t k = 0; k < offsets.size(); ++k) {
                  auto gp = s.input(k);
                  if (gp.empty()) continue;
                  const auto& P = s.input_value(k);
                  const std::size_t pr = P.dim(0), pc = P.dim(1);
                  for (std::size_t i = 0; i < pr; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                      gp[i * pc + j] += rows ? g[(offsets[k] + i) * fixed + j]
                                             : g[i * total + offsets[k] + j];
                }
              });
}

}  // namespace

Var concat_rows(std::span<const Var> parts) { return concat_impl(parts, true); }
Var concat_cols(std::span<const Var> parts) { return concat_impl(parts, false); }

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const Var ins[] = {x};
  return x.tape().record(OpKind::kReshape, std::move(out), ins,
                         [](std::span<const double> g, GradientSink& s) {
                           auto gx = s.input(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Var sum(const Var& x) {
  const auto& X = x.value();
  Tensor out = Tensor::scalar(X.sum());
  const Var ins[] = {x};
  return x.tape().record(OpKind::kSum, std::move(out), ins,
                         [](std::span<const double> g, GradientSink& s) {
                           auto gx = s.input(0);
                           for (auto& v : gx) v += g[0];
                         });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  const auto& Z = logits.value();
  if (Z.size() != targets.size()) {
    throw DimensionError("bce_with_logits: logits " + shape_to_string(Z.shape()) + " vs targets " +
                         shape_to_string(targets.shape()));
  }
  if (Z.size() == 0) throw DimensionError("bce_with_logits: empty input");
  const double n = static_cast<double>(Z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const double z = Z[i];
    loss += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const Var ins[] = {logits};
  return logits.tape().record(OpKind::kBceWithLogits, Tensor::scalar(loss / n), ins,
                              [targets, n](std::span<const double> g, GradientSink& s) {
                                auto gz = s.input(0);
                                const auto& Z = s.input_value(0);
                                for (std::size_t i = 0; i < gz.size(); ++i) {
                                  const double sig = 1.0 / (1.0 + std::exp(-Z[i]));
                                  gz[i] += g[0] * (sig - targets[i]) / n;
                                }
                              });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels, int ignore_label) {
  require_rank2(logits, "softmax_cross_entropy");
  const auto& Z = logits.value();
  const std::size_t k = Z.dim(0), p = Z.dim(1);
  if (labels.size() != p) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(Z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::size_t valid = 0;
  for (int l : lab) {
    if (l == ignore_label) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                           std::to_string(k) + ")");
    }
    ++valid;
  }
  // probs[c*p + j] for valid pixels only
  std::vector<double> probs(k * p, 0.0);
  double loss = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    if (lab[j] == ignore_label) continue;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, Z[c * p + j]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(Z[c * p + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < k; ++c) probs[c * p + j] = std::exp(Z[c * p + j] - lse);
    loss += lse - Z[static_cast<std::size_t>(lab[j]) * p + j];
  }
  const double denom = valid ? static_cast<double>(valid) : 1.0;
  const Var ins[] = {logits};
  return logits.tape().record(
      OpKind::kSoftmaxCrossEntropy, Tensor::scalar(valid ? loss / denom : 0.0), ins,
      [k, p, lab = std::move(lab), probs = std::move(probs), denom, ignore_label](
          std::span<const double> g, GradientSink& s) {
        auto gz = s.input(0);
        for (std::size_t j = 0; j < p; ++j) {
          if (lab[j] == ignore_label) continue;
          for (std::size_t c = 0; c < k; ++c) {
            const double onehot = static_cast<std::size_t>(lab[j]) == c ? 1.0 : 0.0;
            gz[c * p + j] += g[0] * (probs[c * p + j] - onehot) / denom;
          }
        }
      });
}

Var detach(const Var& x) { return x.tape().constant(x.value()); }

}  // namespace getam
