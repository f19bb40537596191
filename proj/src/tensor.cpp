#include "padtts/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "padtts/errors.hpp"

namespace padtts {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<detail::Node>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                   " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

thread_local bool t_no_grad = false;

// Result node; records parents only when some parent needs gradients.
NodePtr make_node(const char* op, Shape shape, std::vector<double> data,
                  std::vector<NodePtr> parents) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  if (t_no_grad) return n;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

void require_2d(const char* op, const Tensor& t) {
  if (t.dim() != 2) shape_fail(op, "expected 2-D operand, got " + shape_str(t.shape()));
}

void accumulate(detail::Node& target, std::span<const double> delta) {
  if (!target.requires_grad) return;
  auto& g = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename F>
Tensor unary(const char* op, const Tensor& a, F&& fwd,
             std::function<double(double x, double y)> dydx) {
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto n = make_node(op, a.shape(), std::move(out), {a.node()});
  if (n->requires_grad) {
    n->backward = [dydx = std::move(dydx)](detail::Node& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * dydx(p.data[i], self.data[i]);
    };
  }
  return Tensor(n);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
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

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  grad_touched = true;
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->data.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return from({1, n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= dim()) throw ShapeError("axis " + std::to_string(axis) + " out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return numel() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw Error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_->grad_touched; }

std::span<const double> Tensor::grad() const {
  if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  node_->grad_touched = false;
}

const char* Tensor::op_name() const { return node_->op; }

void Tensor::backward() const {
  if (numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order)
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

Tensor Tensor::clone() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = node_->requires_grad;
  return Tensor(n);
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::active() { return t_no_grad; }

// ---------------------------------------------------------------------------
// Counter-based RNG

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double counter_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t layer,
                       std::uint64_t index) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ step);
  h = mix64(h ^ layer);
  h = mix64(h ^ index);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) shape_fail("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  auto node = make_node("matmul", {m, n}, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [m, k, n](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      ConstMapMat g(self.grad.data(), m, n);
      if (pa.requires_grad)
        MapMat(pa.ensure_grad().data(), m, k).noalias() +=
            g * ConstMapMat(pb.data.data(), k, n).transpose();
      if (pb.requires_grad)
        MapMat(pb.ensure_grad().data(), k, n).noalias() +=
            ConstMapMat(pa.data.data(), m, k).transpose() * g;
    };
  }
  return Tensor(node);
}

namespace {

template <typename Fwd>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
              double (*da)(double, double, double), double (*db)(double, double, double)) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  auto node = make_node(op, a.shape(), std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [da, db](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += da(pa.data[i], pb.data[i], self.grad[i]);
      }
      if (pb.requires_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += db(pa.data[i], pb.data[i], self.grad[i]);
      }
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  const auto n = a.cols();
  if (row.numel() != n || row.rows() != 1) shape_fail("add_rowwise", a.shape(), row.shape());
  const auto m = a.rows();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto& r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  auto node = make_node("add_rowwise", a.shape(), std::move(out), {a.node(), row.node()});
  if (node->requires_grad) {
    node->backward = [m, n](detail::Node& self) {
      accumulate(*self.parents[0], self.grad);
      auto& pr = *self.parents[1];
      if (pr.requires_grad) {
        auto& g = pr.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    };
  }
  return Tensor(node);
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat", "no operands");
  const auto rows = parts[0].rows();
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.dim() == 0) shape_fail("concat", "scalar operand");
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) shape_fail("concat", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& d = parts[k].data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(d.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  auto node = make_node("concat", shape, std::move(out), std::move(parents));
  if (node->requires_grad) {
    node->backward = [rows, total, widths](detail::Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        auto& p = *self.parents[k];
        if (p.requires_grad) {
          auto& g = p.ensure_grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
              g[i * widths[k] + j] += self.grad[i * total + off + j];
        }
        off += widths[k];
      }
    };
  }
  return Tensor(node);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat_rows", "no operands");
  const auto n = parts[0].cols();
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_2d("concat_rows", p);
    if (p.cols() != n) shape_fail("concat_rows", parts[0].shape(), p.shape());
    total += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
  }
  auto node = make_node("concat_rows", {total, n}, std::move(out), std::move(parents));
  if (node->requires_grad) {
    node->backward = [](detail::Node& self) {
      std::size_t off = 0;
      for (auto& pp : self.parents) {
        const auto len = pp->data.size();
        if (pp->requires_grad) {
          auto& g = pp->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
        }
        off += len;
      }
    };
  }
  return Tensor(node);
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto n = a.cols();
  if (a.dim() == 0 || begin >= end || end > n)
    shape_fail("slice_cols", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                 ") invalid for " + shape_str(a.shape()));
  const auto m = a.rows();
  const auto w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().begin() + i * n + begin, w, out.begin() + i * w);
  Shape shape = a.shape();
  shape.back() = w;
  auto node = make_node("slice_cols", shape, std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward = [m, n, w, begin](detail::Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    };
  }
  return Tensor(node);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d("slice_rows", a);
  if (begin >= end || end > a.size(0))
    shape_fail("slice_rows", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                 ") invalid for " + shape_str(a.shape()));
  const auto n = a.cols();
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  auto node = make_node("slice_rows", {end - begin, n}, std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward = [n, begin](detail::Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d("gather_rows", table);
  const auto n = table.cols();
  std::vector<double> out;
  out.reserve(ids.size() * n);
  for (auto id : ids) {
    if (id >= table.size(0))
      shape_fail("gather_rows", "row " + std::to_string(id) + " out of range for " +
                                    shape_str(table.shape()));
    out.insert(out.end(), table.data().begin() + id * n, table.data().begin() + (id + 1) * n);
  }
  auto node = make_node("gather_rows", {ids.size(), n}, std::move(out), {table.node()});
  if (node->requires_grad) {
    node->backward = [n, rows = std::vector<std::size_t>(ids.begin(), ids.end())](
                         detail::Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) g[rows[i] * n + j] += self.grad[i * n + j];
    };
  }
  return Tensor(node);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  auto node = make_node("reshape", std::move(shape), std::move(out), {a.node()});
  if (node->requires_grad)
    node->backward = [](detail::Node& self) { accumulate(*self.parents[0], self.grad); };
  return Tensor(node);
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const auto m = a.size(0), n = a.size(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), n, m) = ConstMapMat(a.data().data(), m, n).transpose();
  auto node = make_node("transpose", {n, m}, std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward = [m, n](detail::Node& self) {
      MapMat(self.parents[0]->ensure_grad().data(), m, n) +=
          ConstMapMat(self.grad.data(), n, m).transpose();
    };
  }
  return Tensor(node);
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& a) {
  if (a.dim() == 0) shape_fail("softmax", "scalar operand");
  const auto m = a.rows(), n = a.cols();
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += out[i * n + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto node = make_node("softmax", a.shape(), std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward = [m, n](detail::Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.data[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          g[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - dot);
      }
    };
  }
  return Tensor(node);
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t width) {
  require_2d("conv1d", x);
  require_2d("conv1d", kernel);
  if (width % 2 == 0) shape_fail("conv1d", "kernel width must be odd");
  const auto steps = x.size(0), cin = x.size(1), cout = kernel.size(1);
  if (kernel.size(0) != width * cin) shape_fail("conv1d", x.shape(), kernel.shape());
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  const auto& xd = x.data();
  const auto& kd = kernel.data();
  std::vector<double> out(steps * cout, 0.0);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < width; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
      for (std::size_t c = 0; c < cin; ++c) {
        const double v = xd[src * cin + c];
        if (v == 0.0) continue;
        const double* krow = kd.data() + (k * cin + c) * cout;
        for (std::size_t o = 0; o < cout; ++o) out[t * cout + o] += v * krow[o];
      }
    }
  auto node = make_node("conv1d", {steps, cout}, std::move(out), {x.node(), kernel.node()});
  if (node->requires_grad) {
    node->backward = [steps, cin, cout, width, half](detail::Node& self) {
      auto& px = *self.parents[0];
      auto& pk = *self.parents[1];
      std::vector<double>* gx = px.requires_grad ? &px.ensure_grad() : nullptr;
      std::vector<double>* gk = pk.requires_grad ? &pk.ensure_grad() : nullptr;
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t k = 0; k < width; ++k) {
          const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
          for (std::size_t c = 0; c < cin; ++c) {
            const auto krow = (k * cin + c) * cout;
            double acc = 0.0;
            const double v = px.data[src * cin + c];
            for (std::size_t o = 0; o < cout; ++o) {
              const double go = self.grad[t * cout + o];
              acc += go * pk.data[krow + o];
              if (gk) (*gk)[krow + o] += go * v;
            }
            if (gx) (*gx)[src * cin + c] += acc;
          }
        }
    };
  }
  return Tensor(node);
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto node = make_node("sum", {}, {total}, {a.node()});
  if (node->requires_grad) {
    node->backward = [](detail::Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_fail("l1_loss", pred.shape(), target.shape());
  const auto& p = pred.data();
  const auto& t = target.data();
  const double inv = 1.0 / static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - t[i]);
  auto node = make_node("l1_loss", {}, {total * inv}, {pred.node(), target.node()});
  if (node->requires_grad) {
    node->backward = [inv](detail::Node& self) {
      auto& pp = *self.parents[0];
      auto& pt = *self.parents[1];
      const double g0 = self.grad[0] * inv;
      for (std::size_t i = 0; i < pp.data.size(); ++i) {
        const double d = pp.data[i] - pt.data[i];
        const double s = d > 0.0 ? g0 : (d < 0.0 ? -g0 : 0.0);
        if (pp.requires_grad) pp.ensure_grad()[i] += s;
        if (pt.requires_grad) pt.ensure_grad()[i] -= s;
      }
    };
  }
  return Tensor(node);
}

Tensor dropout(const Tensor& a, DropoutContext* ctx) {
  if (ctx == nullptr || ctx->rate() <= 0.0) return a;
  const double keep = 1.0 - ctx->rate();
  const auto layer = ctx->next_layer();
  std::vector<double> mask(a.numel());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = counter_uniform(ctx->seed(), ctx->step(), layer, i) < keep ? 1.0 / keep : 0.0;
  return mul(a, Tensor::from(a.shape(), std::move(mask)));
}

}  // namespace ops
}  // namespace padtts
