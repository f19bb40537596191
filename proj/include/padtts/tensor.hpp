#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle onto a graph node. Copying a Tensor aliases
// the same storage; use clone() for a detached deep copy. Ops never
// broadcast: operands must match exactly except along the axis an op
// contracts or concatenates.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace padtts {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  bool grad_touched = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // empty for leaves

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // 1 x n row vector.
  static Tensor row(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  // Leading extent for 2-D views: product of all but the last axis.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  const char* op_name() const;

  // Populates grad of every reachable requires_grad tensor. Leaf grads
  // accumulate across calls; interior grads are recomputed each call.
  void backward() const;

  Tensor clone() const;
  // Same values, no graph history.
  Tensor detach() const;

  // Identity of the underlying node.
  const void* id() const { return node_.get(); }

  // Internal constructor used by ops.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// While alive on a thread, ops on that thread record no graph history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

// Deterministic dropout mask source: a counter-based hash keyed by
// (seed, step, layer). Each call to next_layer() yields a fresh layer id.
class DropoutContext {
 public:
  DropoutContext(std::uint64_t seed, std::uint64_t step, double rate)
      : seed_(seed), step_(step), rate_(rate) {}

  double rate() const { return rate_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t step() const { return step_; }
  std::uint64_t next_layer() { return layer_++; }

 private:
  std::uint64_t seed_;
  std::uint64_t step_;
  double rate_;
  std::uint64_t layer_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
// Uniform in [0, 1) from (seed, step, layer, index).
double counter_uniform(std::uint64_t seed, std::uint64_t step,
                       std::uint64_t layer, std::uint64_t index);

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a: (..., n), row: (n) or (1, n). Explicit row-wise broadcast.
Tensor add_rowwise(const Tensor& a, const Tensor& row);
// Concatenation along the last axis.
Tensor concat(const std::vector<Tensor>& parts);
// Concatenation along the first axis of 2-D tensors.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Softmax over the last axis, independently per row.
Tensor softmax(const Tensor& a);
// x: (T, C_in); kernel: (K * C_in, C_out) laid out [k][c_in][c_out]; K odd.
// Zero "same" padding; output (T, C_out).
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t width);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// mean(|pred - target|)
Tensor l1_loss(const Tensor& pred, const Tensor& target);
// Inverted dropout; identity when ctx is null or its rate is zero.
Tensor dropout(const Tensor& a, DropoutContext* ctx);

}  // namespace ops
}  // namespace padtts
