#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "modln/normalization.hpp"
#include "modln/tensor.hpp"

namespace modln {

// causal: every position sees itself and the past (decoder-only LM).
// prefix: the context prefix is fully visible to everyone, the response part
// is causal (a bidirectional encoder turned into a decoder).
enum class MaskMode { causal, prefix };
enum class NormMode { vanilla, modulated };

std::string to_string(MaskMode m);
std::string to_string(NormMode m);
MaskMode parse_mask_mode(const std::string& s);
NormMode parse_norm_mode(const std::string& s);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t dim_h = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 16;
  std::size_t ffn_dim = 256;
  std::size_t max_seq_len = 32;
  std::size_t num_labels = 8;
  MaskMode mask_mode = MaskMode::causal;
  NormMode norm_mode = NormMode::modulated;
  double gain_offset = 1.0;
  double eps = 1e-5;
  std::uint64_t seed = 1234;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct AttentionMask {
  std::size_t seq_len = 0;
  std::vector<std::uint8_t> allowed;  // row-major [seq_len, seq_len]

  bool at(std::size_t i, std::size_t j) const { return allowed[i * seq_len + j] != 0; }
};

// `pad` flags padding positions (may be empty for none). Pad positions attend
// to nothing and nobody attends to them.
AttentionMask build_mask(MaskMode mode, std::size_t context_len, std::size_t seq_len,
                         std::span<const std::uint8_t> pad = {});

using NormParams = std::variant<VanillaLNParams, ModLNParams>;

struct BlockWeights {
  Tensor wq, wk, wv, wo;  // [dim_h, dim_h]
  Tensor ffn_w1;          // [dim_h, ffn_dim]
  Tensor ffn_b1;          // [ffn_dim]
  Tensor ffn_w2;          // [ffn_dim, dim_h]
  Tensor ffn_b2;          // [dim_h]
  NormParams norm1;       // after attention
  NormParams norm2;       // after the feed-forward network
};

struct ModelWeights {
  ModelConfig config;
  Tensor token_embedding;     // [vocab, dim_h], also the output projection
  Tensor position_embedding;  // [max_seq_len, dim_h]
  std::vector<BlockWeights> blocks;
  VanillaLNParams final_norm;

  // Deterministic under config.seed. Embeddings ~ N(0, 0.3), projections ~ N(0, 0.02),
  // biases zero, block norms start as identity. The final norm gain starts
  // at zero so an untrained model predicts the uniform distribution.
  static ModelWeights init(const ModelConfig& config);

  // Stable names and order; shared handles, so writes reach the model.
  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
  ModelWeights clone() const;
};

std::size_t expected_parameter_count(const ModelConfig& config);

// B sequences of equal length T, flattened row-major.
struct ModelInput {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> tokens;               // [B * T]
  std::vector<std::size_t> context_len;  // [B], prefix length visible bidirectionally
  std::vector<std::uint8_t> pad;         // [B * T]
  std::vector<int> labels;               // [B], required for modulated models
};

// x [B*T, dim_h]; masks holds B consecutive [T, T] blocks.
Tensor multi_head_attention(const Tensor& x, std::span<const std::uint8_t> masks, const BlockWeights& w,
                            std::size_t n_heads, std::size_t batch);

// labels is one-hot [B, num_labels], or nullopt for vanilla blocks.
Tensor transformer_block(const Tensor& x, const std::optional<Tensor>& labels,
                         std::span<const std::uint8_t> masks, const BlockWeights& w, const ModelConfig& config,
                         std::size_t batch);

// Returns [B*T, vocab]; row i scores the token at position i + 1.
Tensor forward_logits(const ModelWeights& weights, const ModelInput& input);

// Single unpadded sequence; returns [T, vocab].
Tensor forward_logits(const ModelWeights& weights, std::span<const int> tokens, std::size_t context_len,
                      std::optional<EmotionLabel> label);

}  // namespace modln
