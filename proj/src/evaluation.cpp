#include "modln/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "modln/errors.hpp"

namespace modln {

LexiconOracle::LexiconOracle(const MarkerLexicon& lexicon) : num_labels_(lexicon.size()) {
  for (std::size_t l = 0; l < lexicon.size(); ++l) {
    for (const auto& m : lexicon[l]) {
      auto [it, inserted] = marker_label_.emplace(m, static_cast<int>(l));
      if (!inserted && it->second != static_cast<int>(l)) {
        throw ConfigError("lexicon: marker '" + m + "' belongs to labels " + std::to_string(it->second) + " and " +
                          std::to_string(l));
      }
    }
  }
}

std::vector<double> LexiconOracle::scores(std::span<const std::string> tokens) const {
  std::vector<double> s(num_labels_, 0.0);
  for (const auto& t : tokens) {
    auto it = marker_label_.find(t);
    if (it != marker_label_.end()) s[static_cast<std::size_t>(it->second)] += 1.0;
  }
  return s;
}

BowClassifier BowClassifier::train(std::span<const Sample> samples, std::size_t num_labels) {
  if (samples.empty() || num_labels == 0) throw ConfigError("naive Bayes: no training samples");
  BowClassifier nb;
  std::vector<double> docs(num_labels, 0.0);
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_labels) throw IndexError("naive Bayes: label out of range");
    docs[static_cast<std::size_t>(s.label)] += 1.0;
    for (const auto& t : s.response) nb.token_index_.emplace(t, nb.token_index_.size());
  }
  const std::size_t v = nb.token_index_.size();
  std::vector<std::vector<double>> counts(num_labels, std::vector<double>(v, 0.0));
  for (const auto& s : samples) {
    for (const auto& t : s.response) counts[static_cast<std::size_t>(s.label)][nb.token_index_.at(t)] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  for (std::size_t l = 0; l < num_labels; ++l) {
    nb.log_prior_.push_back(docs[l] > 0 ? std::log(docs[l] / n) : -std::numeric_limits<double>::infinity());
    const double total = std::accumulate(counts[l].begin(), counts[l].end(), 0.0);
    std::vector<double> row(v);
    for (std::size_t j = 0; j < v; ++j) row[j] = std::log((counts[l][j] + 1.0) / (total + static_cast<double>(v)));
    nb.log_likelihood_.push_back(std::move(row));
  }
  return nb;
}

std::optional<double> BowClassifier::log_likelihood(int label, const std::string& token) const {
  auto it = token_index_.find(token);
  if (it == token_index_.end()) return std::nullopt;
  return log_likelihood_.at(static_cast<std::size_t>(label))[it->second];
}

std::vector<double> BowClassifier::scores(std::span<const std::string> tokens) const {
  std::vector<double> s = log_prior_;
  for (const auto& t : tokens) {
    auto it = token_index_.find(t);
    if (it == token_index_.end()) continue;
    for (std::size_t l = 0; l < s.size(); ++l) s[l] += log_likelihood_[l][it->second];
  }
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double x : s) z += std::exp(x - mx);
  const double log_z = mx + std::log(z);
  for (double& x : s) x -= log_z;
  return s;
}

std::vector<double> classify_scores(std::span<const std::string> response, const Judge& judge) {
  return std::visit(
      [&](const auto& j) {
        if (response.empty()) return std::vector<double>(j.num_labels(), 0.0);
        return j.scores(response);
      },
      judge);
}

std::vector<int> rank_labels(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return order;
}

bool hits_at_k(std::span<const int> ranking, int true_label, std::size_t k) {
  if (k < 1) throw DomainError("hits_at_k: k must be at least 1");
  k = std::min(k, ranking.size());
  return std::find(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(k), true_label) !=
         ranking.begin() + static_cast<std::ptrdiff_t>(k);
}

DiversityMetrics diversity_metrics(const std::vector<std::vector<std::string>>& responses,
                                   const std::set<std::string>& stopwords) {
  if (responses.empty()) throw ConfigError("diversity_metrics: empty corpus");
  std::set<std::string> unigrams;
  std::set<std::pair<std::string, std::string>> bigrams;
  std::size_t tokens = 0, bigram_count = 0, stops = 0;
  for (const auto& r : responses) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      unigrams.insert(r[i]);
      stops += stopwords.count(r[i]);
      if (i + 1 < r.size()) {
        bigrams.emplace(r[i], r[i + 1]);
        ++bigram_count;
      }
    }
    tokens += r.size();
  }
  if (tokens == 0) throw ConfigError("diversity_metrics: every response is empty");
  DiversityMetrics m;
  m.ttr1 = static_cast<double>(unigrams.size()) / static_cast<double>(tokens);
  m.ttr2 = bigram_count ? static_cast<double>(bigrams.size()) / static_cast<double>(bigram_count) : 0.0;
  m.avg_len = static_cast<double>(tokens) / static_cast<double>(responses.size());
  m.pct_stop = 100.0 * static_cast<double>(stops) / static_cast<double>(tokens);
  return m;
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open stop-word list " + path.string());
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    for (auto& t : tokenize(line)) words.insert(t);
  }
  return words;
}

std::filesystem::path default_stopword_path() { return std::filesystem::path(MODLN_DATA_DIR) / "stopwords_en.txt"; }

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::pair<std::string, double>> report_fields(const MetricsReport& r) {
  std::vector<std::pair<std::string, double>> f = {{"hits1", r.hits1}, {"hits3", r.hits3},     {"hits5", r.hits5},
                                                   {"ttr1", r.ttr1},   {"ttr2", r.ttr2},       {"avg_len", r.avg_len},
                                                   {"pct_stop", r.pct_stop}, {"ppl", r.ppl}};
  if (r.nb_hits) {
    f.emplace_back("nb_hits1", (*r.nb_hits)[0]);
    f.emplace_back("nb_hits3", (*r.nb_hits)[1]);
    f.emplace_back("nb_hits5", (*r.nb_hits)[2]);
  }
  return f;
}

std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string format_report_kv(const MetricsReport& r) {
  std::string out;
  for (const auto& [k, v] : report_fields(r)) out += k + " = " + fixed6(v) + "\n";
  return out;
}

std::string format_report_table(const MetricsReport& r) { return format_comparison({{"value", r}}); }

std::string format_comparison(const std::vector<std::pair<std::string, MetricsReport>>& columns) {
  if (columns.empty()) return {};
  std::string out = pad_right("metric", 12);
  for (const auto& [name, r] : columns) out += pad_right(name, 14);
  out += "\n";
  const auto keys = report_fields(columns.front().second);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out += pad_right(keys[i].first, 12);
    for (const auto& [name, r] : columns) {
      auto fields = report_fields(r);
      out += pad_right(i < fields.size() ? fixed6(fields[i].second) : "-", 14);
    }
    out += "\n";
  }
  return out;
}

std::string format_details_tsv(std::span<const SampleDetail> details) {
  std::string out;
  for (const auto& d : details) {
    out += d.context + "\t" + std::to_string(d.intended_label) + "\t" + d.response + "\t" +
           std::to_string(d.oracle_rank) + "\n";
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EvalResult score_responses(std::span<const Sample> samples, const std::vector<std::vector<std::string>>& responses,
                           const Judges& judges, const KNTrigramLM& lm, const std::set<std::string>& stopwords) {
  if (samples.empty() || samples.size() != responses.size()) {
    throw ConfigError("evaluate: need one response per sample");
  }
  EvalResult res;
  std::array<double, 3> lex{}, nb{};
  const std::array<std::size_t, 3> ks{1, 3, 5};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& resp = responses[i];
    const int label = samples[i].label;
    const auto ranking = rank_labels(classify_scores(resp, Judge{judges.oracle}));
    for (std::size_t j = 0; j < ks.size(); ++j) lex[j] += hits_at_k(ranking, label, ks[j]) ? 1.0 : 0.0;
    if (judges.naive_bayes) {
      const auto nb_rank = rank_labels(classify_scores(resp, Judge{*judges.naive_bayes}));
      for (std::size_t j = 0; j < ks.size(); ++j) nb[j] += hits_at_k(nb_rank, label, ks[j]) ? 1.0 : 0.0;
    }
    const auto pos = std::find(ranking.begin(), ranking.end(), label) - ranking.begin();
    res.details.push_back({detokenize(samples[i].context), label, detokenize(resp), static_cast<int>(pos) + 1});
  }
  const double n = static_cast<double>(samples.size());
  res.report.hits1 = lex[0] / n;
  res.report.hits3 = lex[1] / n;
  res.report.hits5 = lex[2] / n;
  if (judges.naive_bayes) res.report.nb_hits = std::array<double, 3>{nb[0] / n, nb[1] / n, nb[2] / n};

  std::size_t total_tokens = 0;
  for (const auto& r : responses) total_tokens += r.size();
  if (total_tokens > 0) {
    const auto div = diversity_metrics(responses, stopwords);
    res.report.ttr1 = div.ttr1;
    res.report.ttr2 = div.ttr2;
    res.report.avg_len = div.avg_len;
    res.report.pct_stop = div.pct_stop;
  }
  res.report.ppl = kn_perplexity(lm, responses);
  return res;
}

EvalResult evaluate_run(const ModelWeights& weights, const Vocab& vocab, std::span<const Sample> samples,
                        const Judges& judges, const KNTrigramLM& lm, const GenerationConfig& gen,
                        const std::set<std::string>& stopwords, std::size_t threads) {
  std::vector<std::vector<std::string>> responses(samples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      GenerationConfig cfg = gen;
      cfg.seed = sample_seed(gen.seed, i);
      const auto ctx = vocab.encode(samples[i].context);
      const auto label = EmotionLabel::make(samples[i].label, static_cast<int>(weights.config.num_labels));
      const auto ids = generate(ctx, label, weights, cfg);
      responses[i] = vocab.decode(ids);
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, samples.size()));
  if (threads == 1) {
    work(0, samples.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (samples.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(samples.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  return score_responses(samples, responses, judges, lm, stopwords);
}

std::vector<FractionRun> data_efficiency_compare(std::span<const Sample> train_samples, const Vocab& vocab,
                                                 std::span<const Sample> test_samples, const ModelConfig& model,
                                                 const TrainConfig& train_cfg, std::span<const double> fractions,
                                                 const Judges& judges, const KNTrigramLM& lm,
                                                 const GenerationConfig& gen, const std::set<std::string>& stopwords,
                                                 std::size_t threads) {
  std::vector<FractionRun> runs;
  for (double f : fractions) {
    TrainConfig cfg = train_cfg;
    cfg.data_fraction = f;
    FractionRun run{f, train(train_samples, vocab, model, cfg), {}};
    run.eval = evaluate_run(run.training.weights, vocab, test_samples, judges, lm, gen, stopwords, threads);
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace modln
