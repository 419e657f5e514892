#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace modln {

// Interpolated Kneser-Ney trigram model with a single absolute discount per
// order. The highest order uses raw counts, lower orders use continuation
// counts, and the recursion bottoms out in a uniform distribution over the
// predictable vocabulary (known words, </s>, <unk>).
class KNTrigramLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  // Words seen fewer than unk_threshold times become <unk>. Throws
  // DomainError when discount is outside (0, 1) and ConfigError on an empty
  // corpus.
  static KNTrigramLM train(const std::vector<std::vector<std::string>>& sentences, double discount = 0.75,
                           int unk_threshold = 2);

  // No counts at all: every predictable word has probability 1 / W.
  static KNTrigramLM uniform(const std::vector<std::string>& words);

  // P(w | u v). Unknown words map to <unk>; use kBos for sentence-initial
  // history slots.
  double prob(const std::string& w, const std::string& u, const std::string& v) const;

  // Everything prob() can assign mass to, in id order.
  std::vector<std::string> predictable() const;
  std::size_t predictable_size() const { return words_.size() - 1; }
  double discount() const { return discount_; }

  // Sentence-level log probability including </s>; returns the number of
  // predicted tokens through `count`.
  double sentence_log_prob(const std::vector<std::string>& sentence, std::size_t* count = nullptr) const;

 private:
  friend double kn_perplexity(const KNTrigramLM&, const std::vector<std::vector<std::string>>&);

  // Probabilities and log sums are carried in extended precision so that
  // results rounded back to double are exact whenever the true value is
  // representable (a uniform model's perplexity is exactly W).
  long double sentence_log_prob_ext(const std::vector<std::string>& sentence, std::size_t* count) const;
  int lookup(const std::string& w) const;
  long double p_unigram(int w) const;
  long double p_bigram(int w, int v) const;
  long double p_trigram(int w, int u, int v) const;

  static std::uint64_t key2(int a, int b) { return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b); }

  struct ContextStats {
    double total = 0.0;     // sum of counts following this context
    double distinct = 0.0;  // number of distinct followers
  };

  double discount_ = 0.75;
  std::vector<std::string> words_;  // id -> word; 0 <s>, 1 </s>, 2 <unk>
  std::unordered_map<std::string, int> ids_;

  std::unordered_map<std::uint64_t, std::unordered_map<int, double>> trigram_;  // (u,v) -> w -> c(uvw)
  std::unordered_map<std::uint64_t, ContextStats> trigram_ctx_;
  std::unordered_map<int, std::unordered_map<int, double>> bigram_cont_;  // v -> w -> N1+(. v w)
  std::unordered_map<int, ContextStats> bigram_ctx_;
  std::unordered_map<int, double> unigram_cont_;  // w -> N1+(. w)
  ContextStats unigram_ctx_;
};

// exp of the mean negative log-probability per predicted token, </s> included.
double kn_perplexity(const KNTrigramLM& lm, const std::vector<std::vector<std::string>>& sentences);

}  // namespace modln
