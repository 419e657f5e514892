#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modln/data.hpp"
#include "modln/model.hpp"
#include "modln/train.hpp"

namespace modln {

// Everything a pipeline run needs, read from one flat `key = value` file.
struct RunConfig {
  ModelConfig model;  // vocab_size comes from the training data, not the file
  TrainConfig train;
  GenerationConfig gen;
  SynthCorpusConfig synth;
  int heldout_pairs = 200;
  int judge_pairs = 400;

  double kn_discount = 0.75;
  int unk_threshold = 2;
  std::string stopwords = "synthetic";  // synthetic | english | path to a word list
  std::size_t threads = 1;

  std::filesystem::path run_dir = "run";
  // Empty paths resolve to files inside run_dir.
  std::filesystem::path train_data, test_data, judge_data, lexicon, checkpoint;

  double gradcheck_h = 1e-5;
  std::size_t gradcheck_vocab = 11;
  std::vector<double> fractions = {0.1, 1.0};

  // Throws ConfigError on any violated constraint.
  void validate() const;

  std::filesystem::path train_path() const;
  std::filesystem::path test_path() const;
  std::filesystem::path judge_path() const;
  std::filesystem::path lexicon_path() const;
  std::filesystem::path checkpoint_path() const;
};

using ConfigOverride = std::pair<std::string, std::string>;

// Every accepted key, in echo order.
std::vector<std::string> config_keys();

RunConfig parse_config(const std::string& text, const std::vector<ConfigOverride>& overrides = {});
// File values first, then overrides; the result is validated.
RunConfig load_config(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides = {});

// All keys with their resolved values, one `key = value` per line.
std::string format_config(const RunConfig& cfg);

}  // namespace modln
