#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "modln/errors.hpp"
#include "modln/tensor.hpp"

using namespace modln;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Finite-difference check of sum(f(params) * weights) so every output entry
// contributes with a distinct coefficient.
void expect_grads_match(const std::function<Tensor()>& f, std::vector<NamedTensor> params) {
  auto report = finite_diff_check(f, params, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-6) << report.param << "[" << report.index << "]";
  EXPECT_GT(report.checked, 0u);
}

Tensor weighted_sum(const Tensor& y) {
  std::vector<double> w(y.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return sum(mul(y, Tensor::from(y.shape(), w)));
}

}  // namespace

TEST(Matmul, HandExamples) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 1}, {1, 1});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.at(0), 3.0);
  EXPECT_EQ(c.at(1), 7.0);

  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto same = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(same.at(i), a.at(i));

  std::mt19937_64 rng(1);
  auto z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
  ASSERT_EQ(z.shape(), (Shape{2, 4}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, HandExamples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(exp(Tensor::scalar(0.0)).item(), 1.0);
  auto s = add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {10, 20}));
  EXPECT_EQ(s.at(0), 11.0);
  EXPECT_EQ(s.at(1), 22.0);
}

TEST(Elementwise, DomainErrors) {
  EXPECT_THROW(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), DomainError);
  EXPECT_THROW(log(Tensor::scalar(0.0)), DomainError);
  EXPECT_THROW(log(Tensor::scalar(-1.0)), DomainError);
}

TEST(Elementwise, BroadcastForms) {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto row = add(x, Tensor::from({3}, {10, 20, 30}));
  EXPECT_EQ(row.at(1, 2), 36.0);
  auto col = sub(x, Tensor::from({2, 1}, {1, 4}));
  EXPECT_EQ(col.at(1, 0), 0.0);
  EXPECT_EQ(col.at(0, 2), 2.0);
  auto one = mul(x, Tensor::scalar(2.0));
  EXPECT_EQ(one.at(1, 1), 10.0);
  EXPECT_THROW(add(x, Tensor::zeros({2})), DimensionError);
}

TEST(Reduce, HandExamples) {
  auto x = Tensor::from({3}, {1, 2, 3});
  EXPECT_EQ(reduce_last(x, ReduceKind::mean).item(), 2.0);
  EXPECT_NEAR(reduce_last(x, ReduceKind::std_population).item(), 0.816497, 1e-6);
  EXPECT_EQ(reduce_last(Tensor::full({3}, 4.5), ReduceKind::std_population).item(), 0.0);
  EXPECT_THROW(reduce_last(Tensor::zeros({2, 0}), ReduceKind::mean), DimensionError);
}

TEST(Softmax, HandExamples) {
  auto a = softmax_last(Tensor::from({2}, {0, 0}));
  EXPECT_EQ(a.at(0), 0.5);
  auto b = softmax_last(Tensor::from({2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(b.at(0)));
  EXPECT_NEAR(b.at(0), 1.0, 1e-15);
  EXPECT_NEAR(b.at(1), 0.0, 1e-15);
  auto c = softmax_last(Tensor::from({2}, {2, 1}));
  EXPECT_NEAR(c.at(0), 0.731059, 1e-6);
  EXPECT_NEAR(c.at(1), 0.268941, 1e-6);
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 3}, rng, false);
  const std::vector<std::uint8_t> allowed = {1, 0, 0, 1, 1, 0, 0, 0, 0};
  auto p = masked_softmax(x, allowed, 2);
  for (std::size_t g = 0; g < 2; ++g) {
    EXPECT_EQ(p.at(g * 9 + 0), 1.0);
    EXPECT_EQ(p.at(g * 9 + 1), 0.0);
    EXPECT_NEAR(p.at(g * 9 + 3) + p.at(g * 9 + 4), 1.0, 1e-15);
    EXPECT_EQ(p.at(g * 9 + 5), 0.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(p.at(g * 9 + 6 + c), 0.0);
  }
}

TEST(Embedding, LookupAndDuplicateGradient) {
  auto table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<int> ids = {0, 2, 2};
  auto rows = embedding_lookup(table, ids);
  ASSERT_EQ(rows.shape(), (Shape{3, 2}));
  EXPECT_EQ(rows.at(0, 1), 2.0);
  EXPECT_EQ(rows.at(2, 0), 5.0);
  backward(sum(rows));
  EXPECT_EQ(table.grad()[0], 1.0);
  EXPECT_EQ(table.grad()[2], 0.0);
  EXPECT_EQ(table.grad()[4], 2.0);

  auto empty = embedding_lookup(table, std::vector<int>{});
  EXPECT_EQ(empty.shape(), (Shape{0, 2}));
  EXPECT_THROW(embedding_lookup(table, std::vector<int>{3}), IndexError);
}

TEST(Backward, HandExamples) {
  auto x = Tensor::from({3}, {1, -2, 0.5}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  x.zero_grad();
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 2.0 * x.at(i));

  auto a = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(matmul(a, b)));
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, NonScalarLossIsRankError) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(x), RankError);
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  auto x = Tensor::from({2}, {1, 2}, true);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(NoGrad, GuardSuppressesGraph) {
  auto x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    auto y = mul(x, x);
    EXPECT_TRUE(y.node()->inputs.empty());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Tape, InputsPrecedeConsumers) {
  auto a = Tensor::from({2}, {1, 2}, true);
  auto b = mul(a, a);
  auto c = add(b, a);
  auto loss = sum(c);
  auto tape = record_tape(loss);
  auto pos = [&](const Tensor& t) {
    return std::find(tape.order.begin(), tape.order.end(), t.node().get()) - tape.order.begin();
  };
  EXPECT_LT(pos(a), pos(b));
  EXPECT_LT(pos(b), pos(c));
  EXPECT_LT(pos(c), pos(loss));
}

TEST(FiniteDiff, HandExamples) {
  auto theta = Tensor::scalar(3.0, true);
  std::vector<NamedTensor> p = {{"theta", theta}};
  auto r = finite_diff_check([&] { return mul(theta, theta); }, p, 1e-5);
  EXPECT_NEAR(r.analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.numeric, 6.0, 1e-9);

  auto k = finite_diff_check([&] { return add(scale(theta, 0.0), Tensor::scalar(5.0)); }, p, 1e-5);
  EXPECT_EQ(k.analytic, 0.0);
  EXPECT_EQ(k.numeric, 0.0);
  EXPECT_EQ(k.max_rel_error, 0.0);
}

TEST(FiniteDiff, NonDeterministicObjectiveIsRejected) {
  auto theta = Tensor::scalar(1.0, true);
  std::vector<NamedTensor> p = {{"theta", theta}};
  double drift = 0.0;
  EXPECT_THROW(finite_diff_check(
                   [&] {
                     drift += 1.0;
                     return add_scalar(theta, drift);
                   },
                   p),
               DeterminismError);
}

TEST(FiniteDiff, EveryOpAgreesWithCentralDifferences) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto c = random_tensor({3, 4}, rng);
  auto row = random_tensor({4}, rng);
  auto col = random_tensor({3, 1}, rng);
  auto pos = Tensor::from({3, 4}, std::vector<double>(12, 0.0), true);
  for (std::size_t i = 0; i < 12; ++i) pos.data()[i] = 0.5 + 0.1 * static_cast<double>(i);

  expect_grads_match([&] { return weighted_sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
  expect_grads_match([&] { return weighted_sum(matmul_nt(a, c)); }, {{"a", a}, {"c", c}});
  expect_grads_match([&] { return weighted_sum(add(a, row)); }, {{"a", a}, {"row", row}});
  expect_grads_match([&] { return weighted_sum(mul(a, col)); }, {{"a", a}, {"col", col}});
  expect_grads_match([&] { return weighted_sum(div(a, pos)); }, {{"a", a}, {"pos", pos}});
  expect_grads_match([&] { return weighted_sum(sub(a, c)); }, {{"a", a}, {"c", c}});
  expect_grads_match([&] { return weighted_sum(exp(a)); }, {{"a", a}});
  expect_grads_match([&] { return weighted_sum(log(pos)); }, {{"pos", pos}});
  expect_grads_match([&] { return weighted_sum(sigmoid(a)); }, {{"a", a}});
  expect_grads_match([&] { return weighted_sum(reduce_last(a, ReduceKind::mean)); }, {{"a", a}});
  expect_grads_match([&] { return weighted_sum(reduce_last(a, ReduceKind::std_population)); }, {{"a", a}});
  expect_grads_match([&] { return weighted_sum(softmax_last(a)); }, {{"a", a}});
  expect_grads_match([&] { return weighted_sum(repeat_rows(a, 2)); }, {{"a", a}});
  expect_grads_match([&] { return mean(scale(add_scalar(a, 1.5), -2.0)); }, {{"a", a}});

  auto g1 = random_tensor({2, 3, 4}, rng);
  auto g2 = random_tensor({2, 4, 3}, rng);
  auto g3 = random_tensor({2, 3, 4}, rng);
  expect_grads_match([&] { return weighted_sum(bmm(g1, g2)); }, {{"g1", g1}, {"g2", g2}});
  expect_grads_match([&] { return weighted_sum(bmm_nt(g1, g3)); }, {{"g1", g1}, {"g3", g3}});
  expect_grads_match([&] { return weighted_sum(swap_axes_12(reshape(g1, {1, 2, 3, 4}))); }, {{"g1", g1}});

  auto sq = random_tensor({2, 3, 3}, rng);
  const std::vector<std::uint8_t> allowed = {1, 0, 0, 1, 1, 0, 1, 1, 1};
  expect_grads_match([&] { return weighted_sum(masked_softmax(sq, allowed, 2)); }, {{"sq", sq}});

  auto table = random_tensor({5, 3}, rng);
  const std::vector<int> ids = {4, 0, 4, 2};
  expect_grads_match([&] { return weighted_sum(embedding_lookup(table, ids)); }, {{"table", table}});

  auto logits = random_tensor({4, 5}, rng);
  const std::vector<int> targets = {1, 4, 0, 2};
  const std::vector<std::uint8_t> include = {1, 0, 1, 1};
  expect_grads_match([&] { return masked_cross_entropy(logits, targets, include); }, {{"logits", logits}});
}

TEST(CrossEntropy, HandExampleAndErrors) {
  auto logits = Tensor::from({1, 2}, {2, 1});
  const std::vector<int> t = {0};
  const std::vector<std::uint8_t> on = {1};
  EXPECT_NEAR(masked_cross_entropy(logits, t, on).item(), 0.313262, 1e-6);
  const std::vector<std::uint8_t> off = {0};
  EXPECT_THROW(masked_cross_entropy(logits, t, off), DomainError);
  const std::vector<int> bad = {2};
  EXPECT_THROW(masked_cross_entropy(logits, bad, on), IndexError);
}
