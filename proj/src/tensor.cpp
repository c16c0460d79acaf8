#include "avfuse/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "avfuse/error.hpp"

namespace avf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;
thread_local std::string t_fault_op;
thread_local double t_fault_factor = 1.0;

using detail::Node;

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::span<const Tensor> parents, detail::BackwardFn fn) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::initializer_list<Tensor> parents, detail::BackwardFn fn) {
  return make_op(op, std::move(shape), std::move(data),
                 std::span<const Tensor>(parents.begin(), parents.size()), std::move(fn));
}

// Parent gradient buffer, or an empty span when that operand is constant.
std::span<double> parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return {};
  return p.grad_buffer();
}

ConstMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mut_matrix(std::span<double> v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

// ---- shapes / node ---------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("tensor initialised with non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("dim: axis out of range for " + shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("mutable_data: only leaf tensors are writable");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor is not a scalar " + shape_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= shape()[0] || col >= shape()[1]) {
    throw IndexError("at: index out of range for " + shape_string(shape()));
  }
  return node_->data[row * shape()[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("set_requires_grad: only leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad: no gradient recorded");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return !node_->backward; }

const char* Tensor::op() const { return node_->op; }

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->requires_grad && is_leaf();
  return t;
}

// ---- graph ---------------------------------------------------------------

ComputationRecord ComputationRecord::trace(const Tensor& root) {
  ComputationRecord record;
  if (!root.defined()) return record;
  std::unordered_map<const Node*, std::size_t> index;
  // Iterative post-order DFS: a node is emitted after all of its operands.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  std::unordered_map<const Node*, bool> open;
  open[root.node()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!index.count(parent) && !open[parent]) {
        open[parent] = true;
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    Entry entry{node->op, {}};
    for (const auto& p : node->parents) entry.operands.push_back(index.at(p.get()));
    index[node] = record.nodes_.size();
    record.nodes_.push_back(node);
    record.entries_.push_back(std::move(entry));
    stack.pop_back();
  }
  return record;
}

void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (defined() ? shape_string(shape()) : std::string("undefined")));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward: loss is not connected to any tensor requiring grad");
  }
  const auto record = ComputationRecord::trace(*this);
  const auto& nodes = record.nodes();
  for (Node* n : nodes) {
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node& n = **it;
    if (!n.backward || !n.requires_grad) continue;
    if (!t_fault_op.empty() && t_fault_op == n.op) {
      for (double& g : n.grad) g *= t_fault_factor;
    }
    n.backward(n);
  }
  for (Node* n : nodes) {
    if (n->backward && n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  mut_matrix(out, m, n).noalias() = as_matrix(a.node()->data, m, k) * as_matrix(b.node()->data, k, n);
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto g = as_matrix(self.grad, m, n);
    if (auto ga = parent_grad(self, 0); !ga.empty()) {
      mut_matrix(ga, m, k).noalias() += g * as_matrix(self.parents[1]->data, k, n).transpose();
    }
    if (auto gb = parent_grad(self, 1); !gb.empty()) {
      mut_matrix(gb, k, n).noalias() += as_matrix(self.parents[0]->data, m, k).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_string(a.shape()) +
                         " · " + shape_string(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * n);
  mut_matrix(out, m, n).noalias() =
      as_matrix(a.node()->data, m, k) * as_matrix(b.node()->data, n, k).transpose();
  return make_op("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto g = as_matrix(self.grad, m, n);
    if (auto ga = parent_grad(self, 0); !ga.empty()) {
      mut_matrix(ga, m, k).noalias() += g * as_matrix(self.parents[1]->data, n, k);
    }
    if (auto gb = parent_grad(self, 1); !gb.empty()) {
      mut_matrix(gb, n, k).noalias() += g.transpose() * as_matrix(self.parents[0]->data, m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  mut_matrix(out, n, m) = as_matrix(a.node()->data, m, n).transpose();
  return make_op("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    if (auto ga = parent_grad(self, 0); !ga.empty()) {
      mut_matrix(ga, m, n) += as_matrix(self.grad, n, m).transpose();
    }
  });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto g = parent_grad(self, k); !g.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (auto g = parent_grad(self, 1); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (auto g = parent_grad(self, 1); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.node()->data);
  for (double& v : out) v *= factor;
  return make_op("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.dim(0);
  if (x.shape().back() != n) {
    throw DimensionError("add_bias: last extent of " + shape_string(x.shape()) +
                         " differs from bias " + shape_string(bias.shape()));
  }
  std::vector<double> out(x.node()->data);
  const auto& b = bias.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  return make_op("add_bias", x.shape(), std::move(out), {x, bias}, [n](Node& self) {
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (auto g = parent_grad(self, 1); !g.empty()) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& t) {
  require_defined(t, "gelu");
  std::vector<double> out(t.numel());
  const auto& x = t.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = kGeluScale * (x[i] + kGeluCubic * x[i] * x[i] * x[i]);
    out[i] = 0.5 * x[i] * (1.0 + std::tanh(u));
  }
  return make_op("gelu", t.shape(), std::move(out), {t}, [](Node& self) {
    auto g = parent_grad(self, 0);
    if (g.empty()) return;
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double u = kGeluScale * (x[i] + kGeluCubic * x[i] * x[i] * x[i]);
      const double th = std::tanh(u);
      const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x[i] * x[i]);
      g[i] += self.grad[i] * (0.5 * (1.0 + th) + 0.5 * x[i] * (1.0 - th * th) * du);
    }
  });
}

// ---- reductions ------------------------------------------------------------

Tensor softmax(const Tensor& t, std::size_t axis) {
  require_defined(t, "softmax");
  const auto s = split_axis(t.shape(), axis, "softmax");
  const auto& x = t.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = x[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return make_op("softmax", t.shape(), std::move(out), {t}, [s](Node& self) {
    auto g = parent_grad(self, 0);
    if (g.empty()) return;
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t j = base + k * s.inner;
          dot += self.grad[j] * y[j];
        }
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += y[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& t, std::size_t axis) {
  require_defined(t, "log_softmax");
  const auto s = split_axis(t.shape(), axis, "log_softmax");
  const auto& x = t.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = x[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) total += std::exp(x[base + k * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < s.extent; ++k) {
        out[base + k * s.inner] = x[base + k * s.inner] - lse;
      }
    }
  }
  return make_op("log_softmax", t.shape(), std::move(out), {t}, [s](Node& self) {
    auto g = parent_grad(self, 0);
    if (g.empty()) return;
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double total = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) total += self.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += self.grad[j] - std::exp(y[j]) * total;
        }
      }
    }
  });
}

namespace {

Tensor reduce_along(const Tensor& t, std::size_t axis, bool mean, const char* op) {
  require_defined(t, op);
  const auto s = split_axis(t.shape(), axis, op);
  if (s.extent == 0) throw ContractError(std::string(op) + ": empty reduction");
  Shape out_shape;
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i != axis) out_shape.push_back(t.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const double factor = mean ? 1.0 / static_cast<double>(s.extent) : 1.0;
  const auto& x = t.node()->data;
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const double* row = &x[(o * s.extent + k) * s.inner];
      double* dst = &out[o * s.inner];
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  if (mean) {
    for (double& v : out) v *= factor;
  }
  return make_op(op, std::move(out_shape), std::move(out), {t}, [s, factor](Node& self) {
    auto g = parent_grad(self, 0);
    if (g.empty()) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.extent; ++k) {
        double* dst = &g[(o * s.extent + k) * s.inner];
        const double* src = &self.grad[o * s.inner];
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += factor * src[i];
      }
    }
  });
}

}  // namespace

Tensor reduce_mean(const Tensor& t, std::size_t axis) {
  return reduce_along(t, axis, true, "reduce_mean");
}

Tensor reduce_sum(const Tensor& t, std::size_t axis) {
  return reduce_along(t, axis, false, "reduce_sum");
}

Tensor sum(const Tensor& t) {
  require_defined(t, "sum");
  double total = 0.0;
  for (double v : t.node()->data) total += v;
  return make_op("sum", {1}, {total}, {t}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  require_defined(x, "layer_norm");
  require_rank(gain, 1, "layer_norm");
  require_rank(offset, 1, "layer_norm");
  const std::size_t n = x.shape().back();
  if (gain.dim(0) != n || offset.dim(0) != n) {
    throw DimensionError("layer_norm: affine parameters do not match last extent " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto& in = x.node()->data;
  const auto& ga = gain.node()->data;
  const auto& of = offset.node()->data;
  std::vector<double> out(in.size());
  // Normalised values and inverse deviations are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = &in[r * n];
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += v[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (v[i] - mu) * (v[i] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = (v[i] - mu) * is;
      (*xhat)[r * n + i] = h;
      out[r * n + i] = ga[i] * h + of[i];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x, gain, offset},
                 [n, rows, xhat, inv_std](Node& self) {
                   const auto& ga = self.parents[1]->data;
                   auto gx = parent_grad(self, 0);
                   auto gg = parent_grad(self, 1);
                   auto go = parent_grad(self, 2);
                   std::vector<double> dh(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* g = &self.grad[r * n];
                     const double* h = &(*xhat)[r * n];
                     double mean_dh = 0.0, mean_dh_h = 0.0;
                     for (std::size_t i = 0; i < n; ++i) {
                       if (!gg.empty()) gg[i] += g[i] * h[i];
                       if (!go.empty()) go[i] += g[i];
                       dh[i] = g[i] * ga[i];
                       mean_dh += dh[i];
                       mean_dh_h += dh[i] * h[i];
                     }
                     if (gx.empty()) continue;
                     mean_dh /= static_cast<double>(n);
                     mean_dh_h /= static_cast<double>(n);
                     for (std::size_t i = 0; i < n; ++i) {
                       gx[r * n + i] += (*inv_std)[r] * (dh[i] - mean_dh - h[i] * mean_dh_h);
                     }
                   }
                 });
}

// ---- shape manipulation ----------------------------------------------------

Tensor reshape(const Tensor& t, Shape shape) {
  require_defined(t, "reshape");
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: " + shape_string(t.shape()) + " -> " + shape_string(shape));
  }
  return make_op("reshape", std::move(shape), t.node()->data, {t}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("stack: no tensors");
  const Shape& inner = parts[0].shape();
  const std::size_t n = parts[0].numel();
  std::vector<double> out;
  out.reserve(n * parts.size());
  for (const auto& p : parts) {
    require_same_shape(parts[0], p, "stack");
    out.insert(out.end(), p.node()->data.begin(), p.node()->data.end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return make_op("stack", std::move(shape), std::move(out), parts, [n](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto g = parent_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[k * n + i];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no tensors");
  const std::size_t cols = parts[0].shape().back();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column extents differ");
    rows += p.dim(0);
    out.insert(out.end(), p.node()->data.begin(), p.node()->data.end());
  }
  return make_op("concat_rows", {rows, cols}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t len = self.parents[k]->data.size();
      auto g = parent_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      offset += len;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no tensors");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row extents differ");
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].node()->data;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&src[r * widths[k]], widths[k], &out[r * cols + c0]);
    }
    c0 += widths[k];
  }
  return make_op("concat_cols", {rows, cols}, std::move(out), parts,
                 [rows, cols, widths](Node& self) {
                   std::size_t c0 = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     auto g = parent_grad(self, k);
                     if (!g.empty()) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < widths[k]; ++c) {
                           g[r * widths[k] + c] += self.grad[r * cols + c0 + c];
                         }
                       }
                     }
                     c0 += widths[k];
                   }
                 });
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  require_defined(t, "slice_rows");
  if (count == 0 || begin + count > t.dim(0)) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_string(t.shape()));
  }
  const std::size_t width = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = count;
  const auto& src = t.node()->data;
  std::vector<double> out(src.begin() + static_cast<std::ptrdiff_t>(begin * width),
                          src.begin() + static_cast<std::ptrdiff_t>((begin + count) * width));
  return make_op("slice_rows", std::move(shape), std::move(out), {t},
                 [offset = begin * width](Node& self) {
                   auto g = parent_grad(self, 0);
                   if (g.empty()) return;
                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
                 });
}

Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t count) {
  require_rank(t, 2, "slice_cols");
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  if (count == 0 || begin + count > cols) {
    throw IndexError("slice_cols: range out of bounds for " + shape_string(t.shape()));
  }
  const auto& src = t.node()->data;
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&src[r * cols + begin], count, &out[r * count]);
  }
  return make_op("slice_cols", {rows, count}, std::move(out), {t},
                 [rows, cols, begin, count](Node& self) {
                   auto g = parent_grad(self, 0);
                   if (g.empty()) return;
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t c = 0; c < count; ++c) {
                       g[r * cols + begin + c] += self.grad[r * count + c];
                     }
                   }
                 });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw ContractError("embedding: empty id sequence");
  std::vector<double> out(ids.size() * width);
  const auto& src = table.node()->data;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(&src[static_cast<std::size_t>(ids[i]) * width], width, &out[i * width]);
  }
  return make_op("embedding", {ids.size(), width}, std::move(out), {table},
                 [width, rows = std::vector<int>(ids.begin(), ids.end())](Node& self) {
                   auto g = parent_grad(self, 0);
                   if (g.empty()) return;
                   for (std::size_t i = 0; i < rows.size(); ++i) {
                     const std::size_t r = static_cast<std::size_t>(rows[i]);
                     for (std::size_t c = 0; c < width; ++c) {
                       g[r * width + c] += self.grad[i * width + c];
                     }
                   }
                 });
}

Tensor pick(const Tensor& t, std::span<const int> ids) {
  require_rank(t, 2, "pick");
  const std::size_t n = t.dim(0), width = t.dim(1);
  if (ids.size() != n) throw DimensionError("pick: one id per row required");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= width) {
      throw IndexError("pick: id " + std::to_string(ids[i]) + " out of range");
    }
    out[i] = t.node()->data[i * width + static_cast<std::size_t>(ids[i])];
  }
  return make_op("pick", {n}, std::move(out), {t},
                 [width, cols = std::vector<int>(ids.begin(), ids.end())](Node& self) {
                   auto g = parent_grad(self, 0);
                   if (g.empty()) return;
                   for (std::size_t i = 0; i < cols.size(); ++i) {
                     g[i * width + static_cast<std::size_t>(cols[i])] += self.grad[i];
                   }
                 });
}

// ---- gradient check --------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor()>& fn, std::span<const Tensor> inputs,
                           double eps) {
  std::vector<Tensor> vars(inputs.begin(), inputs.end());
  for (auto& v : vars) {
    if (!v.is_leaf()) throw ContractError("grad_check: inputs must be leaf tensors");
    v.zero_grad();
  }
  const Tensor loss = fn();
  loss.backward();
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    auto values = vars[k].mutable_data();
    std::vector<double> analytic(values.size(), 0.0);
    if (vars[k].has_grad()) {
      const auto g = vars[k].grad();
      analytic.assign(g.begin(), g.end());
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = fn().item();
      values[i] = original - eps;
      const double down = fn().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > result.max_rel_error) {
        result = {rel, k, i, analytic[i], numeric};
      }
    }
  }
  return result;
}

void debug::set_gradient_fault(std::string_view op, double factor) {
  t_fault_op = std::string(op);
  t_fault_factor = factor;
}

void debug::clear_gradient_fault() {
  t_fault_op.clear();
  t_fault_factor = 1.0;
}

}  // namespace avf
