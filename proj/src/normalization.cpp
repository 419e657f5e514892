#include "modln/normalization.hpp"

#include "modln/errors.hpp"

namespace modln {

namespace {

void check_last_dim(const Tensor& x, std::size_t dim_h, const char* op) {
  if (x.rank() == 0 || x.shape().back() != dim_h) {
    throw DimensionError(std::string(op) + ": input " + shape_str(x.shape()) +
                         " does not end in dim_h = " + std::to_string(dim_h));
  }
}

void check_modulator_shapes(const Tensor& w1, const Tensor& w2, const std::optional<Tensor>& bias,
                            std::size_t num_labels) {
  if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != w2.dim(0) || w1.dim(0) != num_labels) {
    throw DimensionError("mlp_modulator: incompatible weights " + shape_str(w1.shape()) + " and " +
                         shape_str(w2.shape()) + " for " + std::to_string(num_labels) + " labels");
  }
  if (bias && bias->shape() != Shape{w1.dim(1)}) {
    throw DimensionError("mlp_modulator: bias " + shape_str(bias->shape()) + " does not match inner width " +
                         std::to_string(w1.dim(1)));
  }
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

EmotionLabel EmotionLabel::make(int id, int num_labels) {
  if (num_labels < 1 || id < 0 || id >= num_labels) {
    throw IndexError("emotion label " + std::to_string(id) + " outside [0, " + std::to_string(num_labels) + ")");
  }
  return EmotionLabel{id, num_labels};
}

Tensor EmotionLabel::one_hot() const {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(num_labels)});
  t.data()[static_cast<std::size_t>(id)] = 1.0;
  return t;
}

Tensor one_hot_rows(std::span<const int> labels, int num_labels) {
  const auto l = static_cast<std::size_t>(num_labels);
  Tensor t = Tensor::zeros({labels.size(), l});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const EmotionLabel c = EmotionLabel::make(labels[i], num_labels);
    t.data()[i * l + static_cast<std::size_t>(c.id)] = 1.0;
  }
  return t;
}

VanillaLNParams VanillaLNParams::identity(std::size_t dim_h, double eps) {
  return {Tensor::full({dim_h}, 1.0, true), Tensor::zeros({dim_h}, true), eps};
}

ModLNParams ModLNParams::init(std::size_t num_labels, std::size_t dim_h, double gain_offset, double eps,
                              std::mt19937_64& rng) {
  if (dim_h == 0 || dim_h % 2 != 0) throw ConfigError("ModLNParams: dim_h must be even, got " + std::to_string(dim_h));
  if (!(eps > 0.0)) throw ConfigError("ModLNParams: eps must be positive");
  const std::size_t inner = dim_h / 2;
  ModLNParams p;
  p.w_gamma_1 = normal_tensor({num_labels, inner}, 0.02, rng);
  p.w_gamma_2 = Tensor::zeros({inner, dim_h}, true);
  p.w_beta_1 = normal_tensor({num_labels, inner}, 0.02, rng);
  p.w_beta_2 = Tensor::zeros({inner, dim_h}, true);
  p.bias = Tensor::zeros({inner}, true);
  p.gain_offset = gain_offset;
  p.eps = eps;
  return p;
}

Tensor swish(const Tensor& x) { return mul(x, sigmoid(x)); }

Tensor normalize_last(const Tensor& x, double eps) {
  Tensor mu = reduce_last(x, ReduceKind::mean);
  Tensor sigma = reduce_last(x, ReduceKind::std_population);
  return div(sub(x, mu), add_scalar(sigma, eps));
}

Tensor vanilla_ln(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_last_dim(x, gamma.numel(), "vanilla_ln");
  if (gamma.shape() != beta.shape()) {
    throw DimensionError("vanilla_ln: gamma " + shape_str(gamma.shape()) + " vs beta " + shape_str(beta.shape()));
  }
  return add(mul(normalize_last(x, eps), gamma), beta);
}

Tensor mlp_modulator(const Tensor& labels, const Tensor& w1, const Tensor& w2,
                     const std::optional<Tensor>& inner_bias) {
  if (labels.rank() != 2) throw DimensionError("mlp_modulator: labels must be [B, num_labels]");
  check_modulator_shapes(w1, w2, inner_bias, labels.dim(1));
  Tensor pre = matmul(labels, w1);
  if (inner_bias) pre = add(pre, *inner_bias);
  return matmul(swish(pre), w2);
}

Tensor mlp_modulator(const EmotionLabel& c, const Tensor& w1, const Tensor& w2,
                     const std::optional<Tensor>& inner_bias) {
  Tensor row = reshape(c.one_hot(), {1, static_cast<std::size_t>(c.num_labels)});
  Tensor out = mlp_modulator(row, w1, w2, inner_bias);
  return reshape(out, {out.dim(1)});
}

Tensor mod_ln(const Tensor& x, const EmotionLabel& c, const ModLNParams& p) {
  check_last_dim(x, p.dim_h(), "mod_ln");
  if (static_cast<std::size_t>(c.num_labels) != p.num_labels()) {
    throw IndexError("mod_ln: label space of size " + std::to_string(c.num_labels) + " but parameters expect " +
                     std::to_string(p.num_labels()));
  }
  EmotionLabel::make(c.id, c.num_labels);
  Tensor gain = add_scalar(mlp_modulator(c, p.w_gamma_1, p.w_gamma_2), p.gain_offset);
  Tensor shift = mlp_modulator(c, p.w_beta_1, p.w_beta_2, p.bias);
  return add(mul(normalize_last(x, p.eps), gain), shift);
}

Tensor mod_ln(const Tensor& x, const Tensor& labels, const ModLNParams& p) {
  if (x.rank() != 2) throw DimensionError("mod_ln: batched input must be [B*T, dim_h], got " + shape_str(x.shape()));
  check_last_dim(x, p.dim_h(), "mod_ln");
  if (labels.rank() != 2 || labels.dim(1) != p.num_labels()) {
    throw DimensionError("mod_ln: labels " + shape_str(labels.shape()) + " do not match " +
                         std::to_string(p.num_labels()) + " labels");
  }
  const std::size_t b = labels.dim(0);
  if (b == 0 || x.dim(0) % b != 0) {
    throw DimensionError("mod_ln: " + std::to_string(x.dim(0)) + " rows cannot be split into " +
                         std::to_string(b) + " sequences");
  }
  const std::size_t t = x.dim(0) / b;
  Tensor gain = add_scalar(mlp_modulator(labels, p.w_gamma_1, p.w_gamma_2), p.gain_offset);
  Tensor shift = mlp_modulator(labels, p.w_beta_1, p.w_beta_2, p.bias);
  return add(mul(normalize_last(x, p.eps), repeat_rows(gain, t)), repeat_rows(shift, t));
}

}  // namespace modln
