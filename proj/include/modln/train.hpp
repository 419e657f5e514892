#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "modln/data.hpp"
#include "modln/model.hpp"

namespace modln {

// Mean cross-entropy of logits[i] against token i + 1 over the positions
// whose target is marked in batch.loss_mask.
Tensor teacher_forcing_loss(const ModelWeights& weights, const Batch& batch);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig hp;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState init(std::span<const NamedTensor> params, AdamConfig hp);
};

// One bias-corrected Adam update from the parameters' accumulated gradients.
// A parameter without a gradient is treated as having a zero gradient.
// Throws NumericError naming the first parameter with a non-finite gradient.
void adam_step(std::span<NamedTensor> params, OptimizerState& state);

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before scaling.
double clip_grad_norm(std::span<NamedTensor> params, double max_norm);

void zero_grads(std::span<NamedTensor> params);

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  AdamConfig adam{2e-3, 0.9, 0.999, 1e-8};
  double grad_clip = 1.0;
  double data_fraction = 1.0;
  std::uint64_t shuffle_seed = 99;
};

struct TrainResult {
  ModelWeights weights;
  double initial_loss = 0.0;        // whole training subset, before the first update
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
  double final_loss = 0.0;          // whole training subset, after training
  std::size_t samples_used = 0;
};

// ceil(fraction * N) samples drawn without replacement, deterministic in seed.
std::vector<Sample> subsample(std::span<const Sample> samples, double fraction, std::uint64_t seed);

// Mean per-position loss over a whole sample set, evaluated in batches.
double dataset_loss(const ModelWeights& weights, std::span<const Sample> samples, const Vocab& vocab,
                    std::size_t batch_size);

// Called after every epoch with the 1-based epoch index.
using EpochCallback = std::function<void(std::size_t epoch, const ModelWeights&, double loss)>;

// model.vocab_size is taken from `vocab`.
TrainResult train(std::span<const Sample> samples, const Vocab& vocab, ModelConfig model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct GenerationConfig {
  std::size_t k = 10;
  std::size_t max_new_tokens = 12;
  std::uint64_t seed = 2024;
};

// Keeps the k largest logits (lower id wins ties, -inf never survives) and
// renormalizes them; every other entry is exactly 0.
std::vector<double> top_k_filter(std::span<const double> logits, std::size_t k);

// Tokens laid out for decoding: [BOS] context [SEP], with the context
// left-truncated so that max_new_tokens still fit.
std::vector<int> generation_prefix(std::span<const int> context, std::size_t max_seq_len,
                                   std::size_t max_new_tokens);

// Top-k distribution for the token after `tokens`; reserved ids other than
// [EOS] are excluded.
std::vector<double> next_token_distribution(const ModelWeights& weights, std::span<const int> tokens,
                                            std::size_t context_len, std::optional<EmotionLabel> label,
                                            std::size_t k);

int sample_token(std::span<const double> probs, std::mt19937_64& rng);

// Samples a response after [SEP] until [EOS], max_new_tokens or the sequence
// limit. The returned ids exclude [EOS]. `label` is ignored by vanilla models.
std::vector<int> generate(std::span<const int> context, std::optional<EmotionLabel> label,
                          const ModelWeights& weights, const GenerationConfig& cfg);

// Checkpoint text format "MODLN-CKPT-1": config lines, then one line per
// tensor with name, rank, dims and row-major values in shortest round-trip
// decimal form.
void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights);
std::string checkpoint_text(const ModelWeights& weights);
ModelWeights load_checkpoint(const std::filesystem::path& path);
ModelWeights parse_checkpoint(const std::string& text);

}  // namespace modln
