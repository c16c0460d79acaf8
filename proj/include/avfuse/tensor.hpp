#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace avf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major double tensor with an optional gradient slot. Copies share
// storage; operations build a graph that backward() walks in reverse.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values. Writing into a tensor that already has
  // dependents invalidates their recorded values.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode accumulation from this scalar. Leaf gradients are added to;
  // intermediate gradients are recomputed on every call.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  bool is_leaf() const;
  const char* op() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  // Zero-initialised on first use.
  std::span<double> grad_buffer();
};

}  // namespace detail

// Ordered log of the operations reachable from a root, operands first.
class ComputationRecord {
 public:
  struct Entry {
    const char* op;
    std::vector<std::size_t> operands;  // indices into entries()
  };

  static ComputationRecord trace(const Tensor& root);

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<detail::Node*>& nodes() const { return nodes_; }

 private:
  std::vector<Entry> entries_;
  std::vector<detail::Node*> nodes_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor softmax(const Tensor& t, std::size_t axis);
Tensor log_softmax(const Tensor& t, std::size_t axis);
Tensor reduce_mean(const Tensor& t, std::size_t axis);
Tensor reduce_sum(const Tensor& t, std::size_t axis);
Tensor sum(const Tensor& t);

Tensor gelu(const Tensor& t);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset,
                  double eps = 1e-5);

Tensor reshape(const Tensor& t, Shape shape);
Tensor stack(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t count);

// Row gather from a [V×d] table.
Tensor embedding(const Tensor& table, std::span<const int> ids);
// out[i] = t[i, ids[i]] for a [n×V] tensor.
Tensor pick(const Tensor& t, std::span<const int> ids);

// ---- gradient checking ---------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences over every coordinate of every input. fn must be
// deterministic and return a scalar.
GradCheckResult grad_check(const std::function<Tensor()>& fn,
                           std::span<const Tensor> inputs, double eps = 1e-5);

namespace debug {
// Multiplies the gradient flowing out of every node produced by `op` on this
// thread. Used to prove that grad_check catches broken rules.
void set_gradient_fault(std::string_view op, double factor);
void clear_gradient_fault();
}  // namespace debug

}  // namespace avf
