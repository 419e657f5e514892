#include "modln/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "modln/errors.hpp"

namespace modln {

Tensor teacher_forcing_loss(const ModelWeights& weights, const Batch& batch) {
  const std::size_t n = batch.rows * batch.width;
  std::vector<int> targets(n, 0);
  std::vector<std::uint8_t> include(n, 0);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t i = 0; i + 1 < batch.width; ++i) {
      const std::size_t at = r * batch.width + i;
      targets[at] = batch.ids[at + 1];
      include[at] = batch.loss_mask[at + 1];
    }
  }
  Tensor logits = forward_logits(weights, batch.to_model_input());
  return masked_cross_entropy(logits, targets, include);
}

OptimizerState OptimizerState::init(std::span<const NamedTensor> params, AdamConfig hp) {
  OptimizerState s;
  s.hp = hp;
  for (const auto& [name, t] : params) {
    s.m.emplace_back(t.numel(), 0.0);
    s.v.emplace_back(t.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<NamedTensor> params, OptimizerState& state) {
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (auto& [name, t] : params) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + name);
    }
  }
  ++state.step;
  const auto& hp = state.hp;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].second.data();
    auto grads = params[p].second.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != values.size()) throw DimensionError("adam_step: moment buffer shape mismatch for " + params[p].first);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads.empty() ? 0.0 : grads[i];
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
      values[i] -= hp.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + hp.eps);
    }
  }
}

double clip_grad_norm(std::span<NamedTensor> params, double max_norm) {
  double ss = 0.0;
  for (auto& [name, t] : params)
    for (double g : t.grad()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, t] : params)
      for (double& g : t.grad()) g *= s;
  }
  return norm;
}

void zero_grads(std::span<NamedTensor> params) {
  for (auto& [name, t] : params) t.zero_grad();
}

std::vector<Sample> subsample(std::span<const Sample> samples, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("data_fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(samples.size()) - 1e-9));
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(n, samples.size()));
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples[i]);
  return out;
}

double dataset_loss(const ModelWeights& weights, std::span<const Sample> samples, const Vocab& vocab,
                    std::size_t batch_size) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t positions = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, samples.size() - start);
    Batch b = make_batch(samples.subspan(start, len), vocab, weights.config.max_seq_len);
    std::size_t count = 0;
    for (auto m : b.loss_mask) count += m;
    total += teacher_forcing_loss(weights, b).item() * static_cast<double>(count);
    positions += count;
  }
  if (positions == 0) throw DomainError("dataset_loss: no target positions");
  return total / static_cast<double>(positions);
}

TrainResult train(std::span<const Sample> samples, const Vocab& vocab, ModelConfig model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (samples.empty()) throw ConfigError("train: no training samples");
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  model.vocab_size = vocab.size();
  std::vector<Sample> data = subsample(samples, cfg.data_fraction, cfg.shuffle_seed);

  TrainResult result{ModelWeights::init(model), 0.0, {}, 0.0, data.size()};
  auto params = result.weights.named_parameters();
  OptimizerState opt = OptimizerState::init(params, cfg.adam);
  result.initial_loss = dataset_loss(result.weights, data, vocab, cfg.batch_size);

  std::mt19937_64 rng(cfg.shuffle_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Sample> chunk;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      chunk.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) chunk.push_back(data[order[i]]);
      Batch b = make_batch(chunk, vocab, model.max_seq_len);
      zero_grads(params);
      Tensor loss = teacher_forcing_loss(result.weights, b);
      backward(loss);
      clip_grad_norm(params, cfg.grad_clip);
      adam_step(params, opt);
      loss_sum += loss.item();
      ++batches;
    }
    zero_grads(params);
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.weights, result.epoch_losses.back());
  }
  result.final_loss = dataset_loss(result.weights, data, vocab, cfg.batch_size);
  return result;
}

std::vector<double> top_k_filter(std::span<const double> logits, std::size_t k) {
  if (k < 1 || k > logits.size()) {
    throw DomainError("top_k_filter: k = " + std::to_string(k) + " outside [1, " + std::to_string(logits.size()) + "]");
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::isfinite(logits[i])) idx.push_back(i);
  }
  if (idx.empty()) throw DomainError("top_k_filter: no finite logits");
  const std::size_t keep = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                    [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  idx.resize(keep);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i : idx) mx = std::max(mx, logits[i]);
  std::vector<double> probs(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i : idx) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (std::size_t i : idx) probs[i] /= z;
  return probs;
}

std::vector<int> generation_prefix(std::span<const int> context, std::size_t max_seq_len,
                                   std::size_t max_new_tokens) {
  if (max_seq_len < 4) {
    throw ConfigError("generate: max_seq_len " + std::to_string(max_seq_len) +
                      " cannot hold [BOS] + context + [SEP] + one response token");
  }
  if (context.empty()) throw DomainError("generate: empty context");
  const std::size_t budget = max_seq_len > max_new_tokens + 2 ? max_seq_len - 2 - max_new_tokens : 1;
  const std::size_t keep = std::min(context.size(), std::max<std::size_t>(1, budget));
  std::vector<int> tokens{kBosId};
  tokens.insert(tokens.end(), context.end() - static_cast<std::ptrdiff_t>(keep), context.end());
  tokens.push_back(kSepId);
  return tokens;
}

std::vector<double> next_token_distribution(const ModelWeights& weights, std::span<const int> tokens,
                                            std::size_t context_len, std::optional<EmotionLabel> label,
                                            std::size_t k) {
  NoGradGuard no_grad;
  if (weights.config.norm_mode == NormMode::vanilla) label.reset();
  Tensor logits = forward_logits(weights, tokens, context_len, label);
  const std::size_t v = logits.dim(1);
  std::vector<double> last(logits.data().end() - static_cast<std::ptrdiff_t>(v), logits.data().end());
  for (int id = 0; id < kNumReserved && static_cast<std::size_t>(id) < v; ++id) {
    if (id != kEosId) last[static_cast<std::size_t>(id)] = -std::numeric_limits<double>::infinity();
  }
  return top_k_filter(last, std::min(k, v));
}

int sample_token(std::span<const double> probs, std::mt19937_64& rng) {
  std::discrete_distribution<int> dist(probs.begin(), probs.end());
  return dist(rng);
}

std::vector<int> generate(std::span<const int> context, std::optional<EmotionLabel> label,
                          const ModelWeights& weights, const GenerationConfig& cfg) {
  if (cfg.max_new_tokens < 1) throw ConfigError("generate: max_new_tokens must be at least 1");
  if (cfg.k < 1 || cfg.k > weights.config.vocab_size) {
    throw ConfigError("generate: k = " + std::to_string(cfg.k) + " outside [1, vocab_size]");
  }
  std::vector<int> tokens = generation_prefix(context, weights.config.max_seq_len, cfg.max_new_tokens);
  const std::size_t context_len = tokens.size();
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> response;
  while (response.size() < cfg.max_new_tokens && tokens.size() < weights.config.max_seq_len) {
    auto probs = next_token_distribution(weights, tokens, context_len, label, cfg.k);
    const int next = sample_token(probs, rng);
    if (next == kEosId) break;
    response.push_back(next);
    tokens.push_back(next);
  }
  return response;
}

}  // namespace modln
