#include "gtt/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gtt/error.hpp"

namespace gtt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local Graph* g_active_graph = nullptr;
thread_local int g_no_grad_depth = 0;

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  shape_fail(op, "incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

std::size_t normalize_axis(int axis, std::size_t rank, std::string_view op) {
  const int r = static_cast<int>(rank);
  const int resolved = axis < 0 ? axis + r : axis;
  if (resolved < 0 || resolved >= r) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(resolved);
}

Shape broadcast_shapes(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// For every flat index of `out`, the flat index of the broadcast source `in`.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > pad;) {
    const std::size_t d = in[i - pad];
    in_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  std::vector<std::size_t> map(shape_numel(out));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++counter[axis];
      offset += in_stride[axis];
      if (counter[axis] < out[axis]) break;
      offset -= in_stride[axis] * counter[axis];
      counter[axis] = 0;
    }
  }
  return map;
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void require_defined(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw Error(std::string(op) + ": undefined tensor");
}

template <typename Forward, typename Derivative>
Tensor elementwise(OpKind kind, const Tensor& x, Forward f, Derivative df) {
  require_defined(x, op_name(kind));
  const auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  NodeSpec spec{kind, x.shape(), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, df](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xd->values[i]);
  };
  return make_result(std::move(spec));
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(OpKind kind, BinaryKind which, const Tensor& a, const Tensor& b) {
  const auto name = op_name(kind);
  require_defined(a, name);
  require_defined(b, name);
  Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(out_shape);
  const bool a_same = a.shape() == out_shape;
  const bool b_same = b.shape() == out_shape;
  auto amap = std::make_shared<std::vector<std::size_t>>(
      a_same ? std::vector<std::size_t>{} : broadcast_map(out_shape, a.shape()));
  auto bmap = std::make_shared<std::vector<std::size_t>>(
      b_same ? std::vector<std::size_t>{} : broadcast_map(out_shape, b.shape()));
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_same ? i : (*amap)[i]];
    const double y = bv[b_same ? i : (*bmap)[i]];
    switch (which) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  NodeSpec spec{kind, std::move(out_shape), std::move(out), {a, b}, nullptr};
  auto ad = a.data();
  auto bd = b.data();
  spec.backward = [ad, bd, amap, bmap, a_same, b_same, which](const std::vector<double>& g) {
    const std::size_t count = g.size();
    if (ad->requires_grad) {
      auto& ga = grad_buffer(*ad);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t ia = a_same ? i : (*amap)[i];
        const std::size_t ib = b_same ? i : (*bmap)[i];
        ga[ia] += which == BinaryKind::kMul ? g[i] * bd->values[ib] : g[i];
      }
    }
    if (bd->requires_grad) {
      auto& gb = grad_buffer(*bd);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t ia = a_same ? i : (*amap)[i];
        const std::size_t ib = b_same ? i : (*bmap)[i];
        switch (which) {
          case BinaryKind::kAdd: gb[ib] += g[i]; break;
          case BinaryKind::kSub: gb[ib] -= g[i]; break;
          case BinaryKind::kMul: gb[ib] += g[i] * ad->values[ia]; break;
        }
      }
    }
  };
  return make_result(std::move(spec));
}

constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
constexpr double kSeluScale = 1.0507009873554804934193349852946;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

Tensor slice_axis(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& shape = x.shape();
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t full = shape[axis];
  Shape out_shape = shape;
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  }
  NodeSpec spec{OpKind::kSplit, std::move(out_shape), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, outer, inner, full, start, len](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t src = o * len * inner;
      const std::size_t dst = (o * full + start) * inner;
      for (std::size_t i = 0; i < len * inner; ++i) gx[dst + i] += g[src + i];
    }
  };
  return make_result(std::move(spec));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<TensorData>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

std::size_t Tensor::size(int axis) const {
  return data_->shape[normalize_axis(axis, data_->shape.size(), "size")];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return data_->values[0];
}

std::vector<double> Tensor::grad() const {
  if (data_->grad.empty()) return std::vector<double>(data_->values.size(), 0.0);
  return data_->grad;
}

Tensor Tensor::detach_copy() const {
  return Tensor(data_->shape, data_->values, data_->requires_grad);
}

// ---- graph -------------------------------------------------------------------

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "elementwise_mul";
    case OpKind::kScalarMul: return "scalar_mul";
    case OpKind::kTransposeLastTwo: return "transpose_last_two";
    case OpKind::kSoftmaxLastDim: return "softmax_last_dim";
    case OpKind::kRelu: return "relu";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSelu: return "selu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kMeanLastDim: return "mean_last_dim";
    case OpKind::kConcat: return "concat";
    case OpKind::kSplit: return "split";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kDropout: return "dropout";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSum: return "sum";
    case OpKind::kReshape: return "reshape";
    case OpKind::kCustom: return "custom";
  }
  throw Error("unknown op kind " + std::to_string(static_cast<int>(kind)));
}

OpKind parse_op_kind(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(OpKind::kCustom); ++k) {
    const auto kind = static_cast<OpKind>(k);
    if (op_name(kind) == name) return kind;
  }
  throw Error("unknown op kind '" + std::string(name) + "'");
}

void Graph::record(Node node) { nodes_.push_back(std::move(node)); }

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error("backward: loss must be a scalar, got shape " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (nodes_.empty()) throw Error("backward: graph is empty");
  if (loss.data()->graph != this) throw Error("backward: loss was not recorded on this graph");
  auto& seed = grad_buffer(*loss.data());
  seed[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
}

Graph& Graph::active() {
  thread_local Graph fallback;
  return g_active_graph ? *g_active_graph : fallback;
}

GraphScope::GraphScope() : previous_(g_active_graph) { g_active_graph = &graph_; }

GraphScope::~GraphScope() { g_active_graph = previous_; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }

NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

void backward(const Tensor& loss) { Graph::active().backward(loss); }

std::vector<double>& grad_buffer(TensorData& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

Tensor make_result(NodeSpec spec) {
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(spec.shape);
  data->values = std::move(spec.values);
  if (grad_enabled() && any_requires_grad(spec.inputs)) {
    Graph& graph = Graph::active();
    data->requires_grad = true;
    data->graph = &graph;
    Node node{spec.kind, {}, data, std::move(spec.backward)};
    node.inputs.reserve(spec.inputs.size());
    for (const auto& in : spec.inputs) node.inputs.push_back(in.data());
    graph.record(std::move(node));
  }
  return Tensor(std::move(data));
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_fail("matmul", as, bs);
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) shape_fail("matmul", as, bs);

  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape out_batch = broadcast_shapes(a_batch, b_batch, "matmul");
  const std::size_t batches = shape_numel(out_batch);
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // b shared by every batch: fold the batch into the row dimension.
  const bool folded = b_batch.empty() || shape_numel(b_batch) == 1;
  const bool a_full = a_batch == out_batch;
  auto amap = std::make_shared<std::vector<std::size_t>>();
  auto bmap = std::make_shared<std::vector<std::size_t>>();
  if (!(folded && a_full)) {
    *amap = broadcast_map(out_batch, a_batch);
    *bmap = broadcast_map(out_batch, b_batch);
  }

  std::vector<double> out(batches * m * n);
  if (folded && a_full) {
    MutMap(out.data(), static_cast<Eigen::Index>(batches * m), static_cast<Eigen::Index>(n)).noalias() =
        ConstMap(a.values().data(), static_cast<Eigen::Index>(batches * m), static_cast<Eigen::Index>(k)) *
        ConstMap(b.values().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  } else {
    for (std::size_t i = 0; i < batches; ++i) {
      MutMap(out.data() + i * m * n, m, n).noalias() =
          ConstMap(a.values().data() + (*amap)[i] * m * k, m, k) *
          ConstMap(b.values().data() + (*bmap)[i] * k * n, k, n);
    }
  }

  NodeSpec spec{OpKind::kMatmul, std::move(out_shape), std::move(out), {a, b}, nullptr};
  auto ad = a.data();
  auto bd = b.data();
  const bool fast = folded && a_full;
  spec.backward = [ad, bd, amap, bmap, fast, batches, m, k, n](const std::vector<double>& g) {
    if (fast) {
      const auto rows = static_cast<Eigen::Index>(batches * m);
      ConstMap gm(g.data(), rows, n);
      if (ad->requires_grad) {
        MutMap(grad_buffer(*ad).data(), rows, k).noalias() +=
            gm * ConstMap(bd->values.data(), k, n).transpose();
      }
      if (bd->requires_grad) {
        MutMap(grad_buffer(*bd).data(), k, n).noalias() +=
            ConstMap(ad->values.data(), rows, k).transpose() * gm;
      }
      return;
    }
    for (std::size_t i = 0; i < batches; ++i) {
      ConstMap gm(g.data() + i * m * n, m, n);
      if (ad->requires_grad) {
        MutMap(grad_buffer(*ad).data() + (*amap)[i] * m * k, m, k).noalias() +=
            gm * ConstMap(bd->values.data() + (*bmap)[i] * k * n, k, n).transpose();
      }
      if (bd->requires_grad) {
        MutMap(grad_buffer(*bd).data() + (*bmap)[i] * k * n, k, n).noalias() +=
            ConstMap(ad->values.data() + (*amap)[i] * m * k, m, k).transpose() * gm;
      }
    }
  };
  return make_result(std::move(spec));
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::kAdd, BinaryKind::kAdd, a, b); }

Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::kSub, BinaryKind::kSub, a, b); }

Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::kMul, BinaryKind::kMul, a, b); }

Tensor scalar_mul(const Tensor& x, double factor) {
  return elementwise(
      OpKind::kScalarMul, x, [factor](double v) { return v * factor; },
      [factor](double) { return factor; });
}

Tensor transpose_last_two(const Tensor& x) {
  require_defined(x, "transpose_last_two");
  const Shape& s = x.shape();
  if (s.size() < 2) shape_fail("transpose_last_two", "needs rank >= 2, got " + shape_str(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t batches = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t base = b * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[base + j * r + i] = xv[base + i * c + j];
    }
  }
  NodeSpec spec{OpKind::kTransposeLastTwo, std::move(out_shape), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, batches, r, c](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t base = b * r * c;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[base + i * c + j] += g[base + j * r + i];
      }
    }
  };
  return make_result(std::move(spec));
}

Tensor softmax_last_dim(const Tensor& x) {
  require_defined(x, "softmax_last_dim");
  if (x.dim() == 0) shape_fail("softmax_last_dim", "needs rank >= 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* y = out.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(in[j] - peak);
      total += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  NodeSpec spec{OpKind::kSoftmaxLastDim, x.shape(), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, saved, rows, width](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    const auto& y = *saved;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < width; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  };
  return make_result(std::move(spec));
}

Tensor relu(const Tensor& x) {
  return elementwise(
      OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return elementwise(
      OpKind::kLeakyRelu, x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
  return elementwise(
      OpKind::kGelu, x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluK * v * v * v))); },
      [](double v) {
        const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
      });
}

Tensor selu(const Tensor& x) {
  return elementwise(
      OpKind::kSelu, x,
      [](double v) { return v > 0.0 ? kSeluScale * v : kSeluScale * kSeluAlpha * std::expm1(v); },
      [](double v) { return v > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(v); });
}

Tensor sigmoid(const Tensor& x) {
  auto logistic = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return elementwise(OpKind::kSigmoid, x, logistic, [logistic](double v) {
    const double s = logistic(v);
    return s * (1.0 - s);
  });
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_defined(x, "layer_norm");
  if (x.dim() == 0) shape_fail("layer_norm", "needs rank >= 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += in[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(width);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = s;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (in[j] - mean) * s;
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  NodeSpec spec{OpKind::kLayerNorm, x.shape(), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, saved, inv_std, rows, width](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    const auto& y = *saved;
    const double w = static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * width;
      double g_mean = 0.0;
      double gy_mean = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        g_mean += g[base + j];
        gy_mean += g[base + j] * y[base + j];
      }
      g_mean /= w;
      gy_mean /= w;
      const double s = (*inv_std)[r];
      for (std::size_t j = 0; j < width; ++j) {
        gx[base + j] += s * (g[base + j] - g_mean - y[base + j] * gy_mean);
      }
    }
  };
  return make_result(std::move(spec));
}

Tensor mean_last_dim(const Tensor& x) {
  require_defined(x, "mean_last_dim");
  if (x.dim() == 0) shape_fail("mean_last_dim", "needs rank >= 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const auto xv = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += xv[r * width + j];
    out[r] = total / static_cast<double>(width);
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  NodeSpec spec{OpKind::kMeanLastDim, std::move(out_shape), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, rows, width](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    const double inv = 1.0 / static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += g[r] * inv;
    }
  };
  return make_result(std::move(spec));
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto xv = x.values();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  NodeSpec spec{OpKind::kSum, {}, {total}, {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    for (auto& v : grad_buffer(*xd)) v += g[0];
  };
  return make_result(std::move(spec));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  NodeSpec spec{OpKind::kReshape, std::move(shape), std::vector<double>(x.values().begin(), x.values().end()),
                {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return make_result(std::move(spec));
}

Tensor concat(std::span<const Tensor> parts, int axis_arg) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts[0].shape();
  const std::size_t axis = normalize_axis(axis_arg, first.size(), "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t start = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + start) * inner));
    }
    widths.push_back(len);
    start += len;
  }
  NodeSpec spec{OpKind::kConcat, std::move(out_shape), std::move(out),
                std::vector<Tensor>(parts.begin(), parts.end()), nullptr};
  std::vector<std::shared_ptr<TensorData>> datas;
  for (const auto& p : parts) datas.push_back(p.data());
  spec.backward = [datas, widths, outer, inner, total](const std::vector<double>& g) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < datas.size(); ++p) {
      const std::size_t len = widths[p];
      if (datas[p]->requires_grad) {
        auto& gp = grad_buffer(*datas[p]);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < len * inner; ++i) {
            gp[o * len * inner + i] += g[(o * total + offset) * inner + i];
          }
        }
      }
      offset += len;
    }
  };
  return make_result(std::move(spec));
}

std::vector<Tensor> split(const Tensor& x, int axis_arg, std::span<const std::size_t> sizes) {
  require_defined(x, "split");
  const std::size_t axis = normalize_axis(axis_arg, x.dim(), "split");
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != x.shape()[axis] || std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) {
    shape_fail("split", x.shape(), Shape(sizes.begin(), sizes.end()));
  }
  std::vector<Tensor> parts;
  std::size_t start = 0;
  for (std::size_t len : sizes) {
    parts.push_back(slice_axis(x, axis, start, len));
    start += len;
  }
  return parts;
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape) {
  require_defined(table, "embedding_lookup");
  if (table.dim() != 2) shape_fail("embedding_lookup", "table must be 2-D, got " + shape_str(table.shape()));
  if (shape_numel(ids_shape) != ids.size()) shape_fail("embedding_lookup", ids_shape, Shape{ids.size()});
  const std::size_t rows = table.shape()[0];
  const std::size_t width = table.shape()[1];
  auto saved_ids = std::make_shared<std::vector<std::int64_t>>(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * width);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int64_t id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(id * static_cast<std::int64_t>(width)), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(width);
  NodeSpec spec{OpKind::kEmbeddingLookup, std::move(out_shape), std::move(out), {table}, nullptr};
  auto td = table.data();
  spec.backward = [td, saved_ids, width](const std::vector<double>& g) {
    if (!td->requires_grad) return;
    auto& gt = grad_buffer(*td);
    for (std::size_t i = 0; i < saved_ids->size(); ++i) {
      const auto row = static_cast<std::size_t>((*saved_ids)[i]);
      for (std::size_t j = 0; j < width; ++j) gt[row * width + j] += g[i * width + j];
    }
  };
  return make_result(std::move(spec));
}

Tensor dropout(const Tensor& x, double rate, bool train, Rng* rng) {
  require_defined(x, "dropout");
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0 || !train) return x;
  if (rng == nullptr) throw Error("dropout: training mode needs an rng");
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::bernoulli_distribution keep(1.0 - rate);
  for (auto& m : *mask) m = keep(rng->engine()) ? keep_scale : 0.0;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  NodeSpec spec{OpKind::kDropout, x.shape(), std::move(out), {x}, nullptr};
  auto xd = x.data();
  spec.backward = [xd, mask](const std::vector<double>& g) {
    if (!xd->requires_grad) return;
    auto& gx = grad_buffer(*xd);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  };
  return make_result(std::move(spec));
}

std::vector<Tensor> apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t count) {
    if (inputs.size() != count) {
      throw Error(std::string(op_name(kind)) + ": expected " + std::to_string(count) + " inputs, got " +
                  std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kMatmul: need(2); return {matmul(inputs[0], inputs[1])};
    case OpKind::kAdd: need(2); return {add(inputs[0], inputs[1])};
    case OpKind::kSub: need(2); return {sub(inputs[0], inputs[1])};
    case OpKind::kMul: need(2); return {mul(inputs[0], inputs[1])};
    case OpKind::kScalarMul: need(1); return {scalar_mul(inputs[0], attrs.scalar)};
    case OpKind::kTransposeLastTwo: need(1); return {transpose_last_two(inputs[0])};
    case OpKind::kSoftmaxLastDim: need(1); return {softmax_last_dim(inputs[0])};
    case OpKind::kRelu: need(1); return {relu(inputs[0])};
    case OpKind::kGelu: need(1); return {gelu(inputs[0])};
    case OpKind::kSelu: need(1); return {selu(inputs[0])};
    case OpKind::kLeakyRelu: need(1); return {leaky_relu(inputs[0], attrs.slope)};
    case OpKind::kLayerNorm: need(1); return {layer_norm(inputs[0], attrs.eps)};
    case OpKind::kMeanLastDim: need(1); return {mean_last_dim(inputs[0])};
    case OpKind::kConcat: return {concat(inputs, attrs.axis)};
    case OpKind::kSplit: need(1); return split(inputs[0], attrs.axis, attrs.sizes);
    case OpKind::kEmbeddingLookup: need(1); return {embedding_lookup(inputs[0], attrs.ids, attrs.ids_shape)};
    case OpKind::kDropout: need(1); return {dropout(inputs[0], attrs.rate, attrs.train, attrs.rng)};
    case OpKind::kSigmoid: need(1); return {sigmoid(inputs[0])};
    case OpKind::kSum: need(1); return {sum(inputs[0])};
    case OpKind::kReshape: need(1); return {reshape(inputs[0], attrs.shape)};
    case OpKind::kCustom: break;
  }
  throw Error("apply: op kind '" + std::string(op_name(kind)) + "' has no generic entry point");
}

}  // namespace gtt
