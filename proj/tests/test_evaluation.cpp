#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "modln/errors.hpp"
#include "modln/pipeline.hpp"
#include "oracles.hpp"

using namespace modln;

namespace {

std::vector<std::vector<std::string>> random_corpus(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> n_resp(1, 12), len(0, max_len), word(0, vocab - 1);
  std::vector<std::vector<std::string>> out(n_resp(rng));
  for (auto& r : out) {
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) r.push_back("w" + std::to_string(word(rng)));
  }
  if (std::all_of(out.begin(), out.end(), [](const auto& r) { return r.empty(); })) out[0].push_back("w0");
  return out;
}

MarkerLexicon two_by_two() { return {{"joy1", "joy2"}, {"sad1", "sad2"}}; }

}  // namespace

TEST(Judge, LexiconOracleRanking) {
  MarkerLexicon lex = {{"m0"}, {"m1"}, {"m2"}, {"m3a", "m3b"}};
  LexiconOracle oracle(lex);
  const std::vector<std::string> resp = {"hi", "m3a", "m3b", "x"};
  auto ranking = rank_labels(classify_scores(resp, Judge{oracle}));
  EXPECT_EQ(ranking.front(), 3);
  auto s = oracle.scores(resp);
  EXPECT_GT(s[3], s[0]);
  EXPECT_GT(s[3], s[1]);

  const std::vector<std::string> none = {"hi", "there"};
  EXPECT_EQ(rank_labels(classify_scores(none, Judge{oracle})), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(classify_scores(std::vector<std::string>{}, Judge{oracle}), (std::vector<double>{0, 0, 0, 0}));

  EXPECT_THROW(LexiconOracle(MarkerLexicon{{"m"}, {"m"}}), ConfigError);
}

TEST(Judge, NaiveBayesMatchesHandBayesRule) {
  const std::vector<Sample> train = {{{"c"}, {"x", "x", "y"}, 0}, {{"c"}, {"y"}, 1}};
  auto nb = BowClassifier::train(train, 2);
  EXPECT_NEAR(std::exp(nb.log_prior(0)), 0.5, 1e-15);
  EXPECT_NEAR(std::exp(*nb.log_likelihood(0, "x")), 3.0 / 5.0, 1e-15);
  EXPECT_NEAR(std::exp(*nb.log_likelihood(1, "y")), 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(nb.log_likelihood(0, "z").has_value());
  const std::vector<std::string> query = {"x", "y", "z"};
  auto post = nb.scores(query);
  const double j0 = 0.5 * (3.0 / 5.0) * (2.0 / 5.0), j1 = 0.5 * (1.0 / 3.0) * (2.0 / 3.0);
  EXPECT_NEAR(std::exp(post[0]), j0 / (j0 + j1), 1e-12);
  EXPECT_NEAR(std::exp(post[1]), j1 / (j0 + j1), 1e-12);
  EXPECT_THROW(BowClassifier::train(std::vector<Sample>{}, 2), ConfigError);
}

TEST(Hits, Examples) {
  const std::vector<double> scores = {0.1, 0.5, 0.3, 0.1};
  auto r = rank_labels(scores);
  EXPECT_FALSE(hits_at_k(r, 2, 1));
  EXPECT_TRUE(hits_at_k(r, 2, 2));
  for (int l = 0; l < 4; ++l) {
    EXPECT_TRUE(hits_at_k(r, l, 4));
    EXPECT_TRUE(hits_at_k(r, l, 9));
  }
  EXPECT_THROW(hits_at_k(r, 0, 0), DomainError);
}

TEST(Hits, MatchesBruteForceOnRandomScores) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> score(0, 3), labels(1, 9);
  for (int corpus = 0; corpus < 50; ++corpus) {
    const int n = labels(rng);
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<double> s(static_cast<std::size_t>(n));
      for (double& v : s) v = score(rng);
      const auto r = rank_labels(s);
      for (int l = 0; l < n; ++l) {
        for (std::size_t k = 1; k <= static_cast<std::size_t>(n) + 2; ++k) {
          EXPECT_EQ(hits_at_k(r, l, k), oracle::hit(s, l, k));
        }
      }
    }
  }
}

TEST(Diversity, Examples) {
  auto m = diversity_metrics({{"a", "a", "b"}}, {});
  EXPECT_NEAR(m.ttr1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(m.ttr2, 1.0);
  EXPECT_EQ(m.avg_len, 3.0);
  EXPECT_EQ(diversity_metrics({{"x", "y", "z"}}, {}).ttr1, 1.0);
  auto single = diversity_metrics({{"a"}, {"a"}, {}}, {"a"});
  EXPECT_EQ(single.ttr2, 0.0);
  EXPECT_EQ(single.pct_stop, 100.0);
  EXPECT_EQ(single.avg_len, 2.0 / 3.0);
  EXPECT_THROW(diversity_metrics({}, {}), ConfigError);
  EXPECT_THROW(diversity_metrics({{}}, {}), ConfigError);
}

TEST(Diversity, MatchesBruteForceExactly) {
  std::mt19937_64 rng(33);
  for (int corpus = 0; corpus < 50; ++corpus) {
    auto responses = random_corpus(rng, 1 + corpus % 9, 7);
    const std::set<std::string> stop = {"w0", "w2"};
    auto got = diversity_metrics(responses, stop);
    auto want = oracle::diversity(responses, stop);
    EXPECT_EQ(got.ttr1, want.ttr1);
    EXPECT_EQ(got.ttr2, want.ttr2);
    EXPECT_EQ(got.avg_len, want.avg_len);
    EXPECT_EQ(got.pct_stop, want.pct_stop);
  }
}

TEST(Stopwords, EnglishListLoads) {
  auto words = load_stopwords(default_stopword_path());
  EXPECT_TRUE(words.count("the"));
  EXPECT_TRUE(words.count("and"));
  EXPECT_THROW(load_stopwords("/nonexistent/stop.txt"), ConfigError);
  auto synthetic = resolve_stopwords("synthetic");
  EXPECT_EQ(synthetic.size(), 20u);
}

TEST(KneserNey, ConditionalsSumToOne) {
  const std::vector<std::vector<std::string>> corpus = {
      {"a", "b", "c", "a"}, {"b", "b", "d"}, {"c", "a", "b", "e"}, {"a"}, {"f", "g", "a", "b"}, {"h", "a", "c"}};
  for (int threshold : {1, 2}) {
    auto lm = KNTrigramLM::train(corpus, 0.75, threshold);
    ASSERT_LE(lm.predictable_size(), 10u);
    std::vector<std::string> history = lm.predictable();
    history.push_back(KNTrigramLM::kBos);
    history.push_back("never-seen");
    for (const auto& u : history) {
      for (const auto& v : history) {
        double total = 0.0;
        for (const auto& w : lm.predictable()) total += lm.prob(w, u, v);
        EXPECT_NEAR(total, 1.0, 1e-9) << "(" << u << ", " << v << ")";
      }
    }
  }
}

TEST(KneserNey, HandEvaluatedRecursion) {
  auto lm = KNTrigramLM::train({{"a", "a", "a"}}, 0.75, 1);
  // Predictable words: </s>, <unk>, a. Continuation counts: N1+(. a) = 2,
  // N1+(. </s>) = 1; after a: N1+(. a a) = 2, N1+(. a </s>) = 1; trigram
  // context (a, a) saw a once and </s> once.
  const double d = 0.75;
  const double uni = (2 - d) / 3 + d * 2 / 3 * (1.0 / 3);
  const double bi = (2 - d) / 3 + d * 2 / 3 * uni;
  const double tri = (1 - d) / 2 + d * 2 / 2 * bi;
  EXPECT_NEAR(uni, 7.0 / 12.0, 1e-15);
  EXPECT_NEAR(tri, 21.0 / 32.0, 1e-15);
  EXPECT_NEAR(lm.prob("a", "a", "a"), tri, 1e-15);
  EXPECT_EQ(lm.prob(KNTrigramLM::kBos, "a", "a"), 0.0);
  EXPECT_EQ(lm.prob("zzz", "a", "a"), lm.prob(KNTrigramLM::kUnk, "a", "a"));
}

TEST(KneserNey, RepeatedSentenceIsMostLikely) {
  const std::vector<std::string> s = {"x", "y", "z"};
  auto lm = KNTrigramLM::train({s, s, s, {"y", "x"}, {"z", "z", "x"}}, 0.75, 1);
  const double best = kn_perplexity(lm, {s});
  const std::vector<std::string> words = {"x", "y", "z"};
  for (const auto& a : words) {
    for (const auto& b : words) {
      for (const auto& c : words) {
        std::vector<std::string> other = {a, b, c};
        if (other != s) {
          EXPECT_GT(kn_perplexity(lm, {other}), best);
        }
      }
    }
  }
}

TEST(KneserNey, UniformModelPerplexityIsVocabularySize) {
  for (std::size_t n : {1u, 3u, 8u, 50u, 218u}) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back("t" + std::to_string(i));
    auto lm = KNTrigramLM::uniform(words);
    const double v = static_cast<double>(lm.predictable_size());
    EXPECT_EQ(v, static_cast<double>(n + 2));
    std::vector<std::vector<std::string>> sentences = {{words[0]}, {"oov", words[n - 1], words[0]}, {}};
    EXPECT_EQ(kn_perplexity(lm, sentences), v);
  }
}

TEST(KneserNey, Errors) {
  EXPECT_THROW(KNTrigramLM::train({{"a"}}, 1.0), DomainError);
  EXPECT_THROW(KNTrigramLM::train({{"a"}}, 0.0), DomainError);
  EXPECT_THROW(KNTrigramLM::train({}, 0.5), ConfigError);
  auto lm = KNTrigramLM::uniform({"a"});
  EXPECT_THROW(kn_perplexity(lm, {}), ConfigError);
}

TEST(Harness, GroundTruthResponsesScorePerfectly) {
  SynthCorpusConfig cfg;
  cfg.pairs = 400;
  auto corpus = synth_corpus(cfg);
  std::vector<std::vector<std::string>> responses;
  for (const auto& s : corpus.samples) responses.push_back(s.response);
  Judges judges{LexiconOracle(corpus.lexicon), BowClassifier::train(corpus.samples, 8)};
  auto lm = KNTrigramLM::train(responses);
  auto res = score_responses(corpus.samples, responses, judges, lm, resolve_stopwords("synthetic"));
  EXPECT_EQ(res.report.hits1, 1.0);
  EXPECT_EQ(res.report.hits5, 1.0);
  ASSERT_TRUE(res.report.nb_hits.has_value());
  EXPECT_GT((*res.report.nb_hits)[0], 0.9);
  for (const auto& d : res.details) EXPECT_EQ(d.oracle_rank, 1);
}

TEST(Harness, RandomTokensScoreChance) {
  SynthCorpusConfig cfg;
  cfg.pairs = 4000;
  auto corpus = synth_corpus(cfg);
  std::vector<std::string> pool = corpus.function_words;
  pool.insert(pool.end(), corpus.content_words.begin(), corpus.content_words.end());
  for (const auto& m : corpus.lexicon) pool.insert(pool.end(), m.begin(), m.end());
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::vector<std::string>> responses;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    std::vector<std::string> r;
    for (int k = 0; k < 5; ++k) r.push_back(pool[pick(rng)]);
    responses.push_back(std::move(r));
  }
  Judges judges{LexiconOracle(corpus.lexicon), std::nullopt};
  auto lm = KNTrigramLM::train(responses);
  auto res = score_responses(corpus.samples, responses, judges, lm, {});
  const double p = 1.0 / 8.0, n = static_cast<double>(corpus.samples.size());
  EXPECT_LE(std::abs(res.report.hits1 - p), 3.0 * std::sqrt(p * (1 - p) / n)) << res.report.hits1;
  EXPECT_FALSE(res.report.nb_hits.has_value());
}

TEST(Harness, EmptyResponsesAreScoredNotRejected) {
  const std::vector<Sample> samples = {{{"c"}, {"joy1"}, 1}, {{"c"}, {"sad1"}, 0}};
  Judges judges{LexiconOracle(two_by_two()), std::nullopt};
  auto lm = KNTrigramLM::uniform({"joy1", "sad1"});
  auto res = score_responses(samples, {{}, {}}, judges, lm, {});
  EXPECT_EQ(res.report.hits1, 0.5);
  EXPECT_EQ(res.report.avg_len, 0.0);
  EXPECT_EQ(res.report.ppl, 4.0);
  EXPECT_THROW(score_responses(samples, {{}}, judges, lm, {}), ConfigError);
}

TEST(Report, FixedKeyOrder) {
  MetricsReport r;
  r.hits1 = 0.5;
  r.ppl = 12.25;
  const std::string kv = format_report_kv(r);
  EXPECT_EQ(kv.rfind("hits1 = 0.500000\nhits3 = 0.000000\nhits5 = 0.000000\nttr1", 0), 0u);
  EXPECT_NE(kv.find("ppl = 12.250000\n"), std::string::npos);
  EXPECT_EQ(kv.find("nb_hits1"), std::string::npos);
  r.nb_hits = std::array<double, 3>{0.25, 0.5, 1.0};
  EXPECT_NE(format_report_kv(r).find("nb_hits1 = 0.250000\n"), std::string::npos);
  const SampleDetail d{"ctx words", 3, "resp", 2};
  EXPECT_EQ(format_details_tsv(std::vector<SampleDetail>{d}), "ctx words\t3\tresp\t2\n");
}

TEST(Harness, SampleSeedsAreDistinct) {
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 1000; ++i) seeds.insert(sample_seed(2024, i));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_EQ(sample_seed(2024, 5), sample_seed(2024, 5));
}
