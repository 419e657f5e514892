#pragma once

#include <optional>
#include <random>

#include "modln/tensor.hpp"

namespace modln {

// A one-hot emotion condition c.
struct EmotionLabel {
  int id = 0;
  int num_labels = 1;

  // Throws IndexError when id is outside [0, num_labels).
  static EmotionLabel make(int id, int num_labels);
  Tensor one_hot() const;  // [num_labels]
};

// One-hot rows [labels.size(), num_labels] for a batch of label ids.
Tensor one_hot_rows(std::span<const int> labels, int num_labels);

struct VanillaLNParams {
  Tensor gamma;  // [dim_h]
  Tensor beta;   // [dim_h]
  double eps = 1e-5;

  static VanillaLNParams identity(std::size_t dim_h, double eps);
};

// Label-conditioned scale and shift generators for one normalization site.
//
// scale(c) = gain_offset + swish(c W_gamma_1) W_gamma_2
// shift(c) = swish(c W_beta_1 + bias) W_beta_2
//
// gain_offset = 0 is the modulated normalization exactly as written; the
// default of 1 makes a freshly initialized site (zero outer matrices) act as
// plain normalization.
struct ModLNParams {
  Tensor w_gamma_1;  // [num_labels, dim_h/2]
  Tensor w_gamma_2;  // [dim_h/2, dim_h]
  Tensor w_beta_1;   // [num_labels, dim_h/2]
  Tensor w_beta_2;   // [dim_h/2, dim_h]
  Tensor bias;       // [dim_h/2], beta branch only
  double gain_offset = 1.0;
  double eps = 1e-5;

  // Inner matrices ~ N(0, 0.02), outer matrices and bias zero.
  static ModLNParams init(std::size_t num_labels, std::size_t dim_h, double gain_offset, double eps,
                          std::mt19937_64& rng);

  std::size_t num_labels() const { return w_gamma_1.dim(0); }
  std::size_t dim_h() const { return w_gamma_2.dim(1); }
};

Tensor swish(const Tensor& x);

// (x - mean) / (std + eps) over the last axis, population std.
Tensor normalize_last(const Tensor& x, double eps);

Tensor vanilla_ln(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
inline Tensor vanilla_ln(const Tensor& x, const VanillaLNParams& p) {
  return vanilla_ln(x, p.gamma, p.beta, p.eps);
}

// swish(c W1 + inner_bias) W2 for each one-hot row of `labels` [B, num_labels];
// returns [B, dim_h].
Tensor mlp_modulator(const Tensor& labels, const Tensor& w1, const Tensor& w2,
                     const std::optional<Tensor>& inner_bias = std::nullopt);
// Single-label form; returns [dim_h].
Tensor mlp_modulator(const EmotionLabel& c, const Tensor& w1, const Tensor& w2,
                     const std::optional<Tensor>& inner_bias = std::nullopt);

// Modulated normalization of x [..., dim_h] under a single label; the scale
// and shift vectors are shared by every position.
Tensor mod_ln(const Tensor& x, const EmotionLabel& c, const ModLNParams& p);

// Batched form: x is [B * T, dim_h] holding B sequences of T rows each and
// labels is one-hot [B, num_labels]; row block b is modulated by label b.
Tensor mod_ln(const Tensor& x, const Tensor& labels, const ModLNParams& p);

}  // namespace modln
