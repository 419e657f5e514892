#include "modln/model.hpp"

#include <cmath>
#include <random>

#include "modln/errors.hpp"

namespace modln {

namespace {

Tensor normal_param(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor apply_norm(const Tensor& x, const NormParams& norm, const std::optional<Tensor>& labels) {
  if (const auto* v = std::get_if<VanillaLNParams>(&norm)) return vanilla_ln(x, *v);
  if (!labels) throw ConfigError("transformer_block: modulated normalization needs an emotion label");
  return mod_ln(x, *labels, std::get<ModLNParams>(norm));
}

void push_norm(std::vector<NamedTensor>& out, const std::string& prefix, const NormParams& norm) {
  if (const auto* v = std::get_if<VanillaLNParams>(&norm)) {
    out.emplace_back(prefix + ".gamma", v->gamma);
    out.emplace_back(prefix + ".beta", v->beta);
    return;
  }
  const auto& m = std::get<ModLNParams>(norm);
  out.emplace_back(prefix + ".w_gamma_1", m.w_gamma_1);
  out.emplace_back(prefix + ".w_gamma_2", m.w_gamma_2);
  out.emplace_back(prefix + ".w_beta_1", m.w_beta_1);
  out.emplace_back(prefix + ".w_beta_2", m.w_beta_2);
  out.emplace_back(prefix + ".bias", m.bias);
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.detach();
  c.set_requires_grad(true);
  return c;
}

NormParams clone_norm(const NormParams& norm) {
  if (const auto* v = std::get_if<VanillaLNParams>(&norm)) {
    return VanillaLNParams{copy_param(v->gamma), copy_param(v->beta), v->eps};
  }
  const auto& m = std::get<ModLNParams>(norm);
  return ModLNParams{copy_param(m.w_gamma_1), copy_param(m.w_gamma_2), copy_param(m.w_beta_1),
                     copy_param(m.w_beta_2),  copy_param(m.bias),      m.gain_offset,
                     m.eps};
}

}  // namespace

std::string to_string(MaskMode m) { return m == MaskMode::causal ? "causal" : "prefix"; }
std::string to_string(NormMode m) { return m == NormMode::vanilla ? "vanilla" : "modulated"; }

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "causal") return MaskMode::causal;
  if (s == "prefix") return MaskMode::prefix;
  throw ConfigError("mask_mode must be causal or prefix, got '" + s + "'");
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "vanilla") return NormMode::vanilla;
  if (s == "modulated") return NormMode::modulated;
  throw ConfigError("norm_mode must be vanilla or modulated, got '" + s + "'");
}

void ModelConfig::validate() const {
  if (dim_h == 0 || dim_h % 2 != 0) throw ConfigError("dim_h must be even, got " + std::to_string(dim_h));
  if (n_heads == 0 || dim_h % n_heads != 0) {
    throw ConfigError("dim_h " + std::to_string(dim_h) + " must be divisible by n_heads " + std::to_string(n_heads));
  }
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (num_labels == 0) throw ConfigError("num_labels must be positive");
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

AttentionMask build_mask(MaskMode mode, std::size_t context_len, std::size_t seq_len,
                         std::span<const std::uint8_t> pad) {
  if (context_len > seq_len) {
    throw DimensionError("build_mask: context_len " + std::to_string(context_len) + " exceeds seq_len " +
                         std::to_string(seq_len));
  }
  if (!pad.empty() && pad.size() != seq_len) throw DimensionError("build_mask: pad flags do not match seq_len");
  AttentionMask m{seq_len, std::vector<std::uint8_t>(seq_len * seq_len, 0)};
  for (std::size_t i = 0; i < seq_len; ++i) {
    if (!pad.empty() && pad[i]) continue;
    for (std::size_t j = 0; j < seq_len; ++j) {
      if (!pad.empty() && pad[j]) continue;
      const bool visible = j <= i || (mode == MaskMode::prefix && j < context_len);
      m.allowed[i * seq_len + j] = visible ? 1 : 0;
    }
  }
  return m;
}

ModelWeights ModelWeights::init(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.dim_h;
  ModelWeights w;
  w.config = config;
  // Embeddings feed the first block unnormalized; at 0.02 attention scores
  // start near zero and the copy/slot structure is learned far more slowly.
  w.token_embedding = normal_param({config.vocab_size, d}, 0.3, rng);
  w.position_embedding = normal_param({config.max_seq_len, d}, 0.3, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    BlockWeights b;
    b.wq = normal_param({d, d}, 0.02, rng);
    b.wk = normal_param({d, d}, 0.02, rng);
    b.wv = normal_param({d, d}, 0.02, rng);
    b.wo = normal_param({d, d}, 0.02, rng);
    b.ffn_w1 = normal_param({d, config.ffn_dim}, 0.02, rng);
    b.ffn_b1 = Tensor::zeros({config.ffn_dim}, true);
    b.ffn_w2 = normal_param({config.ffn_dim, d}, 0.02, rng);
    b.ffn_b2 = Tensor::zeros({d}, true);
    for (NormParams* site : {&b.norm1, &b.norm2}) {
      if (config.norm_mode == NormMode::vanilla) {
        *site = VanillaLNParams::identity(d, config.eps);
      } else {
        *site = ModLNParams::init(config.num_labels, d, config.gain_offset, config.eps, rng);
      }
    }
    w.blocks.push_back(std::move(b));
  }
  w.final_norm = VanillaLNParams{Tensor::zeros({d}, true), Tensor::zeros({d}, true), config.eps};
  return w;
}

std::vector<NamedTensor> ModelWeights::named_parameters() const {
  std::vector<NamedTensor> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "block" + std::to_string(l);
    out.emplace_back(p + ".wq", b.wq);
    out.emplace_back(p + ".wk", b.wk);
    out.emplace_back(p + ".wv", b.wv);
    out.emplace_back(p + ".wo", b.wo);
    out.emplace_back(p + ".ffn_w1", b.ffn_w1);
    out.emplace_back(p + ".ffn_b1", b.ffn_b1);
    out.emplace_back(p + ".ffn_w2", b.ffn_w2);
    out.emplace_back(p + ".ffn_b2", b.ffn_b2);
    push_norm(out, p + ".norm1", b.norm1);
    push_norm(out, p + ".norm2", b.norm2);
  }
  out.emplace_back("final_norm.gamma", final_norm.gamma);
  out.emplace_back("final_norm.beta", final_norm.beta);
  return out;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights w;
  w.config = config;
  w.token_embedding = copy_param(token_embedding);
  w.position_embedding = copy_param(position_embedding);
  for (const auto& b : blocks) {
    w.blocks.push_back(BlockWeights{copy_param(b.wq), copy_param(b.wk), copy_param(b.wv), copy_param(b.wo),
                                    copy_param(b.ffn_w1), copy_param(b.ffn_b1), copy_param(b.ffn_w2),
                                    copy_param(b.ffn_b2), clone_norm(b.norm1), clone_norm(b.norm2)});
  }
  w.final_norm = VanillaLNParams{copy_param(final_norm.gamma), copy_param(final_norm.beta), final_norm.eps};
  return w;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.dim_h;
  const std::size_t per_site = c.norm_mode == NormMode::vanilla
                                   ? 2 * d
                                   : 2 * (c.num_labels * (d / 2) + (d / 2) * d) + d / 2;
  const std::size_t per_block = 4 * d * d + d * c.ffn_dim + c.ffn_dim + c.ffn_dim * d + d + 2 * per_site;
  return c.vocab_size * d + c.max_seq_len * d + c.n_layers * per_block + 2 * d;
}

Tensor multi_head_attention(const Tensor& x, std::span<const std::uint8_t> masks, const BlockWeights& w,
                            std::size_t n_heads, std::size_t batch) {
  if (x.rank() != 2 || batch == 0 || x.dim(0) % batch != 0) {
    throw DimensionError("multi_head_attention: input " + shape_str(x.shape()) + " is not [B*T, dim_h] for B = " +
                         std::to_string(batch));
  }
  const std::size_t d = x.dim(1);
  const std::size_t t = x.dim(0) / batch;
  const std::size_t dh = d / n_heads;
  auto split = [&](const Tensor& proj) {
    return reshape(swap_axes_12(reshape(proj, {batch, t, n_heads, dh})), {batch * n_heads, t, dh});
  };
  Tensor q = split(matmul(x, w.wq));
  Tensor k = split(matmul(x, w.wk));
  Tensor v = split(matmul(x, w.wv));
  Tensor scores = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = masked_softmax(scores, masks, n_heads);
  Tensor heads = bmm(probs, v);
  Tensor merged = reshape(swap_axes_12(reshape(heads, {batch, n_heads, t, dh})), {batch * t, d});
  return matmul(merged, w.wo);
}

Tensor transformer_block(const Tensor& x, const std::optional<Tensor>& labels,
                         std::span<const std::uint8_t> masks, const BlockWeights& w, const ModelConfig& config,
                         std::size_t batch) {
  Tensor h = apply_norm(add(x, multi_head_attention(x, masks, w, config.n_heads, batch)), w.norm1, labels);
  Tensor f = add(matmul(swish(add(matmul(h, w.ffn_w1), w.ffn_b1)), w.ffn_w2), w.ffn_b2);
  return apply_norm(add(h, f), w.norm2, labels);
}

Tensor forward_logits(const ModelWeights& weights, const ModelInput& input) {
  const ModelConfig& c = weights.config;
  const std::size_t b = input.batch, t = input.seq_len;
  if (t == 0 || t > c.max_seq_len) {
    throw DimensionError("forward_logits: sequence length " + std::to_string(t) + " outside [1, " +
                         std::to_string(c.max_seq_len) + "]");
  }
  if (input.tokens.size() != b * t || input.context_len.size() != b || input.pad.size() != b * t) {
    throw DimensionError("forward_logits: malformed input for batch " + std::to_string(b) + " x " +
                         std::to_string(t));
  }
  std::vector<int> positions(b * t);
  for (std::size_t i = 0; i < b * t; ++i) positions[i] = static_cast<int>(i % t);

  std::vector<std::uint8_t> masks;
  masks.reserve(b * t * t);
  for (std::size_t s = 0; s < b; ++s) {
    auto m = build_mask(c.mask_mode, input.context_len[s], t,
                        std::span<const std::uint8_t>(input.pad).subspan(s * t, t));
    masks.insert(masks.end(), m.allowed.begin(), m.allowed.end());
  }

  std::optional<Tensor> labels;
  if (c.norm_mode == NormMode::modulated) {
    if (input.labels.size() != b) throw ConfigError("forward_logits: modulated model needs one label per sequence");
    labels = one_hot_rows(input.labels, static_cast<int>(c.num_labels));
  }

  Tensor h = add(embedding_lookup(weights.token_embedding, input.tokens),
                 embedding_lookup(weights.position_embedding, positions));
  for (const auto& block : weights.blocks) h = transformer_block(h, labels, masks, block, c, b);
  h = vanilla_ln(h, weights.final_norm);
  return matmul_nt(h, weights.token_embedding);
}

Tensor forward_logits(const ModelWeights& weights, std::span<const int> tokens, std::size_t context_len,
                      std::optional<EmotionLabel> label) {
  ModelInput in;
  in.batch = 1;
  in.seq_len = tokens.size();
  in.tokens.assign(tokens.begin(), tokens.end());
  in.context_len = {context_len};
  in.pad.assign(tokens.size(), 0);
  if (label) in.labels = {label->id};
  return forward_logits(weights, in);
}

}  // namespace modln
