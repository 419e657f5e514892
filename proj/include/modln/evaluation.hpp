#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "modln/data.hpp"
#include "modln/kneser_ney.hpp"
#include "modln/train.hpp"

namespace modln {

// Exact emotion judge for synthetic corpora: the score of a label is the
// number of its marker tokens in the response.
class LexiconOracle {
 public:
  // Throws ConfigError if two labels share a marker.
  explicit LexiconOracle(const MarkerLexicon& lexicon);

  std::vector<double> scores(std::span<const std::string> tokens) const;
  std::size_t num_labels() const { return num_labels_; }

 private:
  std::size_t num_labels_ = 0;
  std::unordered_map<std::string, int> marker_label_;
};

// Multinomial naive Bayes over response bags of words, add-one smoothed.
class BowClassifier {
 public:
  static BowClassifier train(std::span<const Sample> samples, std::size_t num_labels);

  // Normalized log posteriors; tokens never seen in training are ignored.
  std::vector<double> scores(std::span<const std::string> tokens) const;

  double log_prior(int label) const { return log_prior_.at(static_cast<std::size_t>(label)); }
  // log P(token | label); unseen tokens are outside the model and give nullopt.
  std::optional<double> log_likelihood(int label, const std::string& token) const;
  std::size_t num_labels() const { return log_prior_.size(); }
  std::size_t vocabulary_size() const { return token_index_.size(); }

 private:
  std::vector<double> log_prior_;
  std::unordered_map<std::string, std::size_t> token_index_;
  std::vector<std::vector<double>> log_likelihood_;  // [label][token]
};

using Judge = std::variant<LexiconOracle, BowClassifier>;

// Empty responses score all zeros.
std::vector<double> classify_scores(std::span<const std::string> response, const Judge& judge);

// Label ids by descending score, lower id first among ties.
std::vector<int> rank_labels(std::span<const double> scores);

// k is clamped to the number of labels; k < 1 is a DomainError.
bool hits_at_k(std::span<const int> ranking, int true_label, std::size_t k);

struct DiversityMetrics {
  double ttr1 = 0.0;
  double ttr2 = 0.0;  // 0 when the corpus holds no bigram
  double avg_len = 0.0;
  double pct_stop = 0.0;
};

// Corpus-level (pooled) statistics; bigrams never cross response boundaries.
DiversityMetrics diversity_metrics(const std::vector<std::vector<std::string>>& responses,
                                   const std::set<std::string>& stopwords);

// One word per line, '#' comments.
std::set<std::string> load_stopwords(const std::filesystem::path& path);
std::filesystem::path default_stopword_path();

struct MetricsReport {
  double hits1 = 0.0, hits3 = 0.0, hits5 = 0.0;
  double ttr1 = 0.0, ttr2 = 0.0, avg_len = 0.0, pct_stop = 0.0;
  double ppl = 0.0;
  // Hits@{1,3,5} under the naive Bayes judge, when one was supplied.
  std::optional<std::array<double, 3>> nb_hits;

  bool operator==(const MetricsReport&) const = default;
};

// `key = value` lines in fixed order, six decimals.
std::string format_report_kv(const MetricsReport& r);
std::string format_report_table(const MetricsReport& r);
std::string format_comparison(const std::vector<std::pair<std::string, MetricsReport>>& columns);

struct SampleDetail {
  std::string context;
  int intended_label = 0;
  std::string response;
  int oracle_rank = 0;  // 1-based rank of the intended label under the lexicon oracle
};

// context TAB intended_label TAB generated_response TAB oracle_rank
std::string format_details_tsv(std::span<const SampleDetail> details);

struct Judges {
  LexiconOracle oracle;
  std::optional<BowClassifier> naive_bayes;
};

struct EvalResult {
  MetricsReport report;
  std::vector<SampleDetail> details;
};

// Generation seed for the i-th evaluation sample.
std::uint64_t sample_seed(std::uint64_t base, std::size_t index);

// Scores an arbitrary set of responses against intended labels.
EvalResult score_responses(std::span<const Sample> samples, const std::vector<std::vector<std::string>>& responses,
                           const Judges& judges, const KNTrigramLM& lm, const std::set<std::string>& stopwords);

// Generates one response per sample (its context and label) and scores it.
// Samples are spread over `threads` workers; results do not depend on it.
EvalResult evaluate_run(const ModelWeights& weights, const Vocab& vocab, std::span<const Sample> samples,
                        const Judges& judges, const KNTrigramLM& lm, const GenerationConfig& gen,
                        const std::set<std::string>& stopwords, std::size_t threads = 1);

struct FractionRun {
  double fraction = 1.0;
  TrainResult training;
  EvalResult eval;
};

// Trains one model per data fraction with identical seeds and evaluates each.
std::vector<FractionRun> data_efficiency_compare(std::span<const Sample> train_samples, const Vocab& vocab,
                                                 std::span<const Sample> test_samples, const ModelConfig& model,
                                                 const TrainConfig& train_cfg, std::span<const double> fractions,
                                                 const Judges& judges, const KNTrigramLM& lm,
                                                 const GenerationConfig& gen, const std::set<std::string>& stopwords,
                                                 std::size_t threads = 1);

}  // namespace modln
