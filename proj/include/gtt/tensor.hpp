#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// Every differentiable operation that touches a tensor with requires_grad
// appends one Node to the thread's active Graph. Graph::backward walks the
// node list once, newest first, so gradient accumulation across fan-out is
// plain addition into the input's grad buffer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gtt/rng.hpp"

namespace gtt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;
struct NodeSpec;

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until written by backward
  bool requires_grad = false;
  const Graph* graph = nullptr;  // graph that recorded this tensor, if any
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t dim() const { return data_->shape.size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const { return data_->values.size(); }

  std::span<const double> values() const { return data_->values; }
  // Direct write access, for optimizers and finite-difference probes. Never
  // mutate a tensor that a live graph still depends on.
  std::span<double> mutable_values() { return data_->values; }
  double item() const;
  double operator[](std::size_t flat_index) const { return data_->values[flat_index]; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool flag) { data_->requires_grad = flag; }
  bool has_grad() const { return !data_->grad.empty(); }
  // Gradient buffer; zeros when backward never reached this tensor.
  std::vector<double> grad() const;
  void zero_grad() { data_->grad.clear(); }

  // Deep copy without graph history.
  Tensor detach_copy() const;

  const std::shared_ptr<TensorData>& data() const { return data_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}
  friend Tensor make_result(NodeSpec spec);
  std::shared_ptr<TensorData> data_;
};

enum class OpKind {
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kTransposeLastTwo,
  kSoftmaxLastDim,
  kRelu,
  kGelu,
  kSelu,
  kLeakyRelu,
  kLayerNorm,
  kMeanLastDim,
  kConcat,
  kSplit,
  kEmbeddingLookup,
  kDropout,
  kSigmoid,
  kSum,
  kReshape,
  kCustom,
};

std::string_view op_name(OpKind kind);
// Throws Error for names that are not a known op kind.
OpKind parse_op_kind(std::string_view name);

using BackwardFn = std::function<void(const std::vector<double>& grad_out)>;

struct Node {
  OpKind kind;
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> output;
  BackwardFn backward;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(Node node);
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor.
  void backward(const Tensor& loss);

  // The graph ops record into on this thread.
  static Graph& active();

 private:
  friend class GraphScope;
  std::vector<Node> nodes_;
};

// Installs a fresh graph as the thread's active graph for its lifetime.
class GraphScope {
 public:
  GraphScope();
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;
  Graph& graph() { return graph_; }

 private:
  Graph graph_;
  Graph* previous_;
};

// Disables recording on this thread while alive (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// backward() on the active graph.
void backward(const Tensor& loss);

// Building block for ops defined outside this file (fused losses etc.).
struct NodeSpec {
  OpKind kind = OpKind::kCustom;
  Shape shape;
  std::vector<double> values;
  std::vector<Tensor> inputs;
  // Receives d(loss)/d(output); adds into the inputs' grad_buffer().
  BackwardFn backward;
};
Tensor make_result(NodeSpec spec);

// Grad buffer of `t`, allocated as zeros on first use.
std::vector<double>& grad_buffer(TensorData& t);

// ---- operations ----------------------------------------------------------
//
// Broadcasting (add, sub, mul): numpy rules, shapes aligned from the right;
// a dimension broadcasts when it is 1 or missing.
// matmul: (..., m, k) x (..., k, n) -> (..., m, n); leading batch dims
// broadcast the same way. Both operands must be at least 2-D.
// softmax_last_dim, layer_norm, mean_last_dim act on the last axis;
// mean_last_dim drops it.
// concat/split take a possibly negative axis; all other dims must agree.
// embedding_lookup: table (rows, d), ids of shape S -> S + (d).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double factor);
Tensor transpose_last_two(const Tensor& x);
Tensor softmax_last_dim(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor selu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
Tensor mean_last_dim(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, std::span<const std::size_t> sizes);
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids,
                        const Shape& ids_shape);
// Inverted dropout: kept units are scaled by 1/(1-rate).
Tensor dropout(const Tensor& x, double rate, bool train, Rng* rng);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Attributes for the generic entry point; each op reads only its own fields.
struct OpAttrs {
  double scalar = 1.0;
  double slope = 0.01;
  double eps = 1e-5;
  double rate = 0.0;
  bool train = false;
  Rng* rng = nullptr;
  int axis = -1;
  std::vector<std::size_t> sizes;
  Shape shape;
  std::span<const std::int64_t> ids;
  Shape ids_shape;
};

// Dispatches to the typed functions above. Single-output ops return one
// tensor; split returns one per requested size.
std::vector<Tensor> apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace gtt
