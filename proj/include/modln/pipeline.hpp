#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "modln/config.hpp"
#include "modln/evaluation.hpp"

namespace modln {

// Each stage reads its inputs from the paths in the config and writes only
// inside cfg.run_dir, together with `<stage>.resolved.conf` and `seeds.txt`.

struct SynthOutputs {
  SynthCorpus train;
  std::vector<Sample> test;
  std::vector<Sample> judge;
};

// train.tsv, test.tsv, judge.tsv and lexicon.tsv. The held-out and judge
// splits are drawn with synth_seed + 1 and synth_seed + 2.
SynthOutputs run_synth(const RunConfig& cfg);

// vocab.txt, checkpoint-epoch-N.txt, checkpoint.txt and loss_trace.tsv.
TrainResult run_train(const RunConfig& cfg);

// generations.tsv: one response per test context and label.
void run_generate(const RunConfig& cfg);

// metrics.txt, metrics_table.txt and details.tsv.
EvalResult run_evaluate(const RunConfig& cfg);

// fraction-<f>/ per fraction, plus comparison.txt.
std::vector<FractionRun> run_compare_fractions(const RunConfig& cfg);

// Replaces every parameter with N(0, stddev) draws so that no gradient is
// structurally zero during a gradient check.
void randomize_parameters(const ModelWeights& weights, std::uint64_t seed, double stddev = 0.5);

// Finite-difference check of a small randomized model on a two-row batch
// (one row padded). vocab_size and max_seq_len are forced to the check's
// own values.
GradCheckReport model_gradcheck(ModelConfig model, std::size_t vocab_size, double h, std::uint64_t seed);
GradCheckReport run_gradcheck(const RunConfig& cfg);

// Vocab saved next to a checkpoint.
std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint);

std::set<std::string> resolve_stopwords(const std::string& spec);

}  // namespace modln
