#include "modln/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "modln/errors.hpp"

namespace modln {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Builds the output node of an op. Graph links are only kept when recording
// is on and some input needs a gradient; `bw` is attached in that case.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> bw) {
  auto n = new_node(std::move(shape), std::move(value));
  n->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->inputs.push_back(t->node());
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

void accumulate(Node& target, std::size_t i, double g) {
  target.ensure_grad();
  target.grad[i] += g;
}

enum class Bcast { same, suffix, column, single };

struct Broadcast {
  Bcast a_mode = Bcast::same;
  Bcast b_mode = Bcast::same;
  Shape out;
  std::size_t last = 1;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

bool is_column(const Shape& small, const Shape& big) {
  if (small.size() != big.size() || big.empty()) return false;
  if (small.back() != 1) return false;
  return std::equal(small.begin(), small.end() - 1, big.begin());
}

Bcast classify(const Shape& small, const Shape& big) {
  if (small == big) return Bcast::same;
  if (shape_numel(small) == 1) return Bcast::single;
  if (is_suffix(small, big)) return Bcast::suffix;
  if (is_column(small, big)) return Bcast::column;
  throw DimensionError("broadcast: incompatible shapes " + shape_str(small) + " and " +
                       shape_str(big));
}

Broadcast plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast p;
  try {
    if (a.numel() >= b.numel() && a.rank() >= b.rank()) {
      p.out = a.shape();
      p.b_mode = classify(b.shape(), a.shape());
    } else {
      p.out = b.shape();
      p.a_mode = classify(a.shape(), b.shape());
    }
  } catch (const DimensionError&) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) +
                         " with " + shape_str(b.shape()));
  }
  p.last = p.out.empty() ? 1 : p.out.back();
  if (p.last == 0) p.last = 1;
  return p;
}

inline std::size_t map_index(Bcast mode, std::size_t i, std::size_t small_numel,
                             std::size_t last) {
  switch (mode) {
    case Bcast::same: return i;
    case Bcast::single: return 0;
    case Bcast::suffix: return i % small_numel;
    case Bcast::column: return i / last;
  }
  return i;
}

template <typename Fwd, typename Da, typename Db>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Da da, Db db) {
  const Broadcast p = plan_broadcast(a, b, op);
  const std::size_t n = shape_numel(p.out);
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<double> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(av[map_index(p.a_mode, i, na, p.last)], bv[map_index(p.b_mode, i, nb, p.last)]);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(p.out, std::move(out), op, {&a, &b}, [an, bn, p, na, nb, da, db](Node& self) {
    const std::size_t count = self.value.size();
    for (std::size_t i = 0; i < count; ++i) {
      const double g = self.grad[i];
      if (g == 0.0) continue;
      const std::size_t ia = map_index(p.a_mode, i, na, p.last);
      const std::size_t ib = map_index(p.b_mode, i, nb, p.last);
      const double x = an->value[ia];
      const double y = bn->value[ib];
      if (an->requires_grad) accumulate(*an, ia, g * da(x, y, self.value[i]));
      if (bn->requires_grad) accumulate(*bn, ib, g * db(x, y, self.value[i]));
    }
  });
}

template <typename Fwd, typename Dx>
Tensor unary_op(const Tensor& x, const char* op, Fwd fwd, Dx dx) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), op, {&x}, [xn, dx](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      xn->grad[i] += self.grad[i] * dx(xn->value[i], self.value[i]);
    }
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor::Tensor() : node_(new_node({1}, {0.0})) {}
Tensor::Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = new_node(std::move(shape), std::vector<double>(n, v));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw RankError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank(*this, 2, "at");
  if (r >= dim(0) || c >= dim(1)) throw IndexError("at: index out of range");
  return node_->value[r * dim(1) + c];
}

Tensor Tensor::detach() const { return Tensor::from(shape(), node_->value, false); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by exact zero");
  }
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument");
  }
  return unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", stable_sigmoid,
                  [](double, double out) { return out * (1.0 - out); });
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a) {
  switch (kind) {
    case ElementwiseKind::exp: return exp(a);
    case ElementwiseKind::log: return log(a);
    case ElementwiseKind::sigmoid: return sigmoid(a);
    default: throw Error("elementwise: binary op called with one argument");
  }
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
    case ElementwiseKind::add: return add(a, b);
    case ElementwiseKind::sub: return sub(a, b);
    case ElementwiseKind::mul: return mul(a, b);
    case ElementwiseKind::div: return div(a, b);
    default: throw Error("elementwise: unary op called with two arguments");
  }
}

Tensor scale(const Tensor& x, double s) {
  return unary_op(
      x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(
      x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return make_result({m, n}, std::move(out), "matmul", {&a, &b}, [an, bn, m, k, n](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      gemm_nt(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      gemm_tn(an->value.data(), self.grad.data(), bn->grad.data(), m, k, n);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return make_result({m, n}, std::move(out), "matmul_nt", {&a, &b}, [an, bn, m, k, n](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      gemm_nn(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      // db[n,k] += dy[m,n]^T a[m,k]
      gemm_tn(self.grad.data(), an->value.data(), bn->grad.data(), m, n, k);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != g || b.dim(1) != k) {
    throw DimensionError("bmm: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(g * m * n, 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  auto an = a.node(), bn = b.node();
  return make_result({g, m, n}, std::move(out), "bmm", {&a, &b}, [an, bn, g, m, k, n](Node& self) {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t i = 0; i < g; ++i) {
      const double* dy = self.grad.data() + i * m * n;
      if (an->requires_grad) gemm_nt(dy, bn->value.data() + i * k * n, an->grad.data() + i * m * k, m, n, k);
      if (bn->requires_grad) gemm_tn(an->value.data() + i * m * k, dy, bn->grad.data() + i * k * n, m, k, n);
    }
  });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  if (b.dim(0) != g || b.dim(2) != k) {
    throw DimensionError("bmm_nt: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(g * m * n, 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    gemm_nt(a.data().data() + i * m * k, b.data().data() + i * n * k, out.data() + i * m * n, m, k, n);
  }
  auto an = a.node(), bn = b.node();
  return make_result({g, m, n}, std::move(out), "bmm_nt", {&a, &b}, [an, bn, g, m, k, n](Node& self) {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t i = 0; i < g; ++i) {
      const double* dy = self.grad.data() + i * m * n;
      if (an->requires_grad) gemm_nn(dy, bn->value.data() + i * n * k, an->grad.data() + i * m * k, m, n, k);
      if (bn->requires_grad) gemm_tn(dy, an->value.data() + i * m * k, bn->grad.data() + i * n * k, m, n, k);
    }
  });
}

Tensor reduce_last(const Tensor& x, ReduceKind kind) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("reduce_last: empty reduction axis in " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  std::vector<double> out(rows);
  std::vector<double> means(rows);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j];
    means[r] = s / static_cast<double>(d);
    if (kind == ReduceKind::mean) {
      out[r] = means[r];
    } else {
      double ss = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xv[r * d + j] - means[r];
        ss += c * c;
      }
      out[r] = std::sqrt(ss / static_cast<double>(d));
    }
  }
  auto xn = x.node();
  const char* op = kind == ReduceKind::mean ? "mean_last" : "std_last";
  return make_result(std::move(out_shape), std::move(out), op, {&x},
                     [xn, kind, d, rows, means = std::move(means)](Node& self) {
                       xn->ensure_grad();
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double g = self.grad[r];
                         if (kind == ReduceKind::mean) {
                           for (std::size_t j = 0; j < d; ++j) xn->grad[r * d + j] += g * inv_d;
                         } else {
                           const double sigma = self.value[r];
                           // d sigma / dx_j = (x_j - mu) / (d sigma); zero at a constant row.
                           if (sigma == 0.0) continue;
                           for (std::size_t j = 0; j < d; ++j) {
                             xn->grad[r * d + j] += g * (xn->value[r * d + j] - means[r]) * inv_d / sigma;
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xn = x.node();
  return make_result({1}, {s}, "sum", {&x}, [xn](Node& self) {
    xn->ensure_grad();
    const double g = self.grad[0];
    for (double& v : xn->grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t d,
                  const std::uint8_t* allowed) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < d; ++j) {
    if (!allowed || allowed[j]) mx = std::max(mx, in[j]);
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill(out.begin(), out.begin() + d, 0.0);
    return;
  }
  double z = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double e = (!allowed || allowed[j]) ? std::exp(in[j] - mx) : 0.0;
    out[j] = e;
    z += e;
  }
  for (std::size_t j = 0; j < d; ++j) out[j] /= z;
}

void softmax_backward(Node& self, Node& x, std::size_t d) {
  x.ensure_grad();
  const std::size_t rows = self.value.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* y = self.value.data() + r * d;
    const double* g = self.grad.data() + r * d;
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
    for (std::size_t j = 0; j < d; ++j) x.grad[r * d + j] += y[j] * (g[j] - dot);
  }
}

}  // namespace

Tensor softmax_last(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_last: empty last axis in " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < x.numel() / d; ++r) {
    softmax_rows(x.data().subspan(r * d, d), std::span<double>(out).subspan(r * d, d), d, nullptr);
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), "softmax", {&x},
                     [xn, d](Node& self) { softmax_backward(self, *xn, d); });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> allowed, std::size_t repeat) {
  require_rank(x, 3, "masked_softmax");
  const std::size_t g = x.dim(0), r = x.dim(1), c = x.dim(2);
  if (repeat == 0 || g % repeat != 0 || allowed.size() != (g / repeat) * r * c) {
    throw DimensionError("masked_softmax: mask of " + std::to_string(allowed.size()) +
                         " entries does not fit " + shape_str(x.shape()) + " with repeat " +
                         std::to_string(repeat));
  }
  std::vector<double> out(x.numel());
  for (std::size_t gi = 0; gi < g; ++gi) {
    const std::uint8_t* block = allowed.data() + (gi / repeat) * r * c;
    for (std::size_t ri = 0; ri < r; ++ri) {
      const std::size_t off = (gi * r + ri) * c;
      softmax_rows(x.data().subspan(off, c), std::span<double>(out).subspan(off, c), c, block + ri * c);
    }
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), "masked_softmax", {&x},
                     [xn, c](Node& self) { softmax_backward(self, *xn, c); });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding_lookup");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(v) + ")");
    }
    auto row = table.data().subspan(static_cast<std::size_t>(ids[i]) * d, d);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto tn = table.node();
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), "embedding", {&table},
                     [tn, d, saved = std::move(saved)](Node& self) {
                       tn->ensure_grad();
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         const std::size_t base = static_cast<std::size_t>(saved[i]) * d;
                         for (std::size_t j = 0; j < d; ++j) tn->grad[base + j] += self.grad[i * d + j];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto xn = x.node();
  return make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                     "reshape", {&x}, [xn](Node& self) {
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
                     });
}

Tensor swap_axes_12(const Tensor& x) {
  require_rank(x, 4, "swap_axes_12");
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t l = 0; l < d; ++l)
          out[((i * c + k) * b + j) * d + l] = xv[((i * b + j) * c + k) * d + l];
  auto xn = x.node();
  return make_result({a, c, b, d}, std::move(out), "swap_axes_12", {&x}, [xn, a, b, c, d](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t l = 0; l < d; ++l)
            xn->grad[((i * b + j) * c + k) * d + l] += self.grad[((i * c + k) * b + j) * d + l];
  });
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  require_rank(x, 2, "repeat_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(n * times * d);
  auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy(xv.begin() + static_cast<std::ptrdiff_t>(r * d),
                xv.begin() + static_cast<std::ptrdiff_t>((r + 1) * d),
                out.begin() + static_cast<std::ptrdiff_t>((r * times + t) * d));
  auto xn = x.node();
  return make_result({n * times, d}, std::move(out), "repeat_rows", {&x}, [xn, n, d, times](Node& self) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < d; ++j) xn->grad[r * d + j] += self.grad[(r * times + t) * d + j];
  });
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const std::uint8_t> include) {
  require_rank(logits, 2, "masked_cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n || include.size() != n) {
    throw DimensionError("masked_cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(include.size()) + " mask entries for " +
                         shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (auto m : include) count += m ? 1 : 0;
  if (count == 0) throw DomainError("masked_cross_entropy: no positions selected");

  std::vector<double> probs(n * v, 0.0);
  double total = 0.0;
  auto lv = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    if (!include[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw IndexError("masked_cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary");
    }
    const double* row = lv.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - row[targets[r]];
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] = std::exp(row[j] - log_z);
  }
  const double inv = 1.0 / static_cast<double>(count);
  auto ln = logits.node();
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> inc(include.begin(), include.end());
  return make_result({1}, {total * inv}, "cross_entropy", {&logits},
                     [ln, n, v, inv, probs = std::move(probs), tgt = std::move(tgt),
                      inc = std::move(inc)](Node& self) {
                       ln->ensure_grad();
                       const double g = self.grad[0] * inv;
                       for (std::size_t r = 0; r < n; ++r) {
                         if (!inc[r]) continue;
                         for (std::size_t j = 0; j < v; ++j) ln->grad[r * v + j] += g * probs[r * v + j];
                         ln->grad[r * v + static_cast<std::size_t>(tgt[r])] -= g;
                       }
                     });
}

Tape record_tape(const Tensor& root) {
  Tape tape;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; each node is emitted after all of its inputs.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw RankError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  Tape tape = record_tape(loss);
  // Interior gradients restart from zero on every call; only leaves accumulate.
  for (Node* n : tape.order) {
    if (!n->inputs.empty()) n->grad.assign(n->value.size(), 0.0);
  }
  Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::span<NamedTensor> params,
                                  double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_check: step must be positive");
  double base = 0.0;
  {
    NoGradGuard guard;
    const double first = f().item();
    const double second = f().item();
    base = first;
    if (first != second) {
      throw DeterminismError("finite_diff_check: objective returned " + std::to_string(first) +
                             " then " + std::to_string(second));
    }
  }
  for (auto& [name, p] : params) p.zero_grad();
  backward(f());

  GradCheckReport report;
  report.resolution_floor =
      1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base)) / h;
  NoGradGuard guard;
  for (auto& [name, p] : params) {
    auto values = p.data();
    auto grads = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double analytic = grads.empty() ? 0.0 : grads[i];
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double magnitude = std::abs(analytic) + std::abs(numeric);
      if (magnitude < report.resolution_floor) ++report.below_floor;
      const double rel = std::abs(analytic - numeric) / std::max(report.resolution_floor, magnitude);
      ++report.checked;
      if (report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.param = name;
        report.index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace modln
