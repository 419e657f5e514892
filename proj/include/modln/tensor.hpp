#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Ops executed while gradient
// recording is enabled link their output to their inputs; backward() walks
// that graph in reverse topological order. The graph is rebuilt on every
// forward pass and released when the last handle goes away.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace modln {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::uint64_t id = 0;
  const char* op = "leaf";

  void ensure_grad();
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(std::shared_ptr<Node> node);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  // Empty span when no gradient has been accumulated.
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const;

  // Deep copy of the values with no graph history.
  Tensor detach() const;

  std::uint64_t node_id() const { return node_->id; }
  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording is per thread. While a NoGradGuard is alive, ops produce
// plain values without graph links.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

enum class ElementwiseKind { add, sub, mul, div, exp, log, sigmoid };
enum class ReduceKind { mean, std_population };

// Binary ops broadcast over trailing dimensions only: the smaller operand's
// shape is either a suffix of the larger one (e.g. [d] against [n, d]), a
// single element, or the larger shape with its last axis collapsed to 1
// (e.g. [n, 1] against [n, d]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor elementwise(ElementwiseKind kind, const Tensor& a);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor bmm(const Tensor& a, const Tensor& b);        // [g,m,k] x [g,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);     // [g,m,k] x [g,n,k]^T

Tensor reduce_last(const Tensor& x, ReduceKind kind);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax_last(const Tensor& x);
// Softmax over the last axis of x[g, r, c] where entry (g, r, c) takes part
// only if allowed[(g / repeat) * r * c + r_idx * c + c_idx] is nonzero.
// Excluded entries get probability exactly 0; a row with nothing allowed is
// all zeros.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> allowed, std::size_t repeat);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor reshape(const Tensor& x, Shape shape);
// [a, b, c, d] -> [a, c, b, d]
Tensor swap_axes_12(const Tensor& x);
// [n, d] -> [n * times, d], each row repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);

// Mean negative log-likelihood of targets[i] under softmax(logits[i]) over
// the rows with include[i] != 0.
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const std::uint8_t> include);

// Reverse-topological order of the graph below `root`.
struct Tape {
  std::vector<Node*> order;  // inputs precede the ops that consume them
};
Tape record_tape(const Tensor& root);

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// the scalar `loss`. Leaf gradients add up across calls until zeroed.
void backward(const Tensor& loss);

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double resolution_floor = 0.0;
  std::size_t below_floor = 0;  // entries with |a| + |n| under resolution_floor
};

// Compares analytic gradients against central differences for every scalar
// in `params`. Relative error is |a - n| / max(floor, |a| + |n|), where
// floor = 1e4 * eps * max(1, |f|) / h: one rounding step of f moves the
// difference quotient by about eps * |f| / h, so smaller gradients cannot be
// resolved to a relative error of 1e-4.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::span<NamedTensor> params, double h = 1e-5);

}  // namespace modln
