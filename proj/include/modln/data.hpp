#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "modln/model.hpp"

namespace modln {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kBosId = 3;
inline constexpr int kEosId = 4;
inline constexpr int kNumReserved = 5;

std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

class Vocab {
 public:
  Vocab();  // reserved tokens only

  // Reserved tokens first, then the distinct non-reserved tokens in sorted order.
  static Vocab build(const std::vector<std::vector<std::string>>& token_lists);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(const std::string& token) const;  // kUnkId when unknown
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

bool is_reserved(int id);

struct Sample {
  std::vector<std::string> context;
  std::vector<std::string> response;
  int label = 0;

  bool operator==(const Sample&) const = default;
};

// Marker tokens per label; index = label id.
using MarkerLexicon = std::vector<std::vector<std::string>>;

struct SynthCorpusConfig {
  int num_labels = 8;
  int markers_per_label = 12;
  int shared_vocab_size = 120;  // function words + content words
  int pairs = 2000;
  int min_context_len = 3;
  int max_context_len = 8;
  // Response shapes: F function word, M marker of the sample's label,
  // C content word, copied from the context with probability copy_prob.
  std::vector<std::string> templates = {"FMFC", "FFMC", "FCMF", "MFFC", "FMFM"};
  double copy_prob = 0.5;
  // Function and content words are drawn with weight 1 / rank^zipf_exponent
  // in list order; 0 gives uniform draws. Markers are always uniform.
  double zipf_exponent = 1.0;
  std::uint64_t seed = 7;
};

struct SynthCorpus {
  std::vector<Sample> samples;
  MarkerLexicon lexicon;
  std::vector<std::string> function_words;
  std::vector<std::string> content_words;
};

// The 20 shared function words used by every synthetic corpus.
const std::vector<std::string>& synthetic_function_words();

// Deterministic under cfg.seed. Word lists and lexicons depend only on the
// size parameters, so corpora drawn with different seeds share a vocabulary.
SynthCorpus synth_corpus(const SynthCorpusConfig& cfg);

// context TAB response TAB label, LF line endings, no header.
void write_corpus_tsv(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> load_tsv(const std::filesystem::path& path, int num_labels);
std::vector<Sample> parse_tsv(std::string_view text, int num_labels);

void write_lexicon_tsv(const std::filesystem::path& path, const MarkerLexicon& lexicon);
MarkerLexicon load_lexicon_tsv(const std::filesystem::path& path, int num_labels);

// Row layout: [BOS] context [SEP] response [EOS] [PAD]...
struct Batch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<int> ids;                  // [rows * width]
  std::vector<std::size_t> context_len;  // BOS + context + SEP
  std::vector<std::uint8_t> loss_mask;   // by target position: response tokens and EOS
  std::vector<int> labels;

  ModelInput to_model_input() const;
};

struct KeptLengths {
  std::size_t context = 0;
  std::size_t response = 0;
};

// How many context (most recent) and response (leading) tokens survive in a
// row of width max_seq_len.
KeptLengths fit_lengths(std::size_t context_len, std::size_t response_len, std::size_t max_seq_len);

Batch make_batch(std::span<const Sample> samples, const Vocab& vocab, std::size_t max_seq_len);

}  // namespace modln
