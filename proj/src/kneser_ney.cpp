#include "modln/kneser_ney.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "modln/errors.hpp"

namespace modln {

namespace {

constexpr int kBosIdx = 0;
constexpr int kEosIdx = 1;
constexpr int kUnkIdx = 2;

}  // namespace

KNTrigramLM KNTrigramLM::uniform(const std::vector<std::string>& words) {
  KNTrigramLM lm;
  lm.words_ = {kBos, kEos, kUnk};
  std::set<std::string> sorted(words.begin(), words.end());
  for (const auto& w : sorted) {
    if (w != kBos && w != kEos && w != kUnk) lm.words_.push_back(w);
  }
  for (std::size_t i = 0; i < lm.words_.size(); ++i) lm.ids_[lm.words_[i]] = static_cast<int>(i);
  return lm;
}

KNTrigramLM KNTrigramLM::train(const std::vector<std::vector<std::string>>& sentences, double discount,
                               int unk_threshold) {
  if (!(discount > 0.0 && discount < 1.0)) throw DomainError("kn_train: discount must lie in (0, 1)");
  if (sentences.empty()) throw ConfigError("kn_train: empty reference corpus");

  std::map<std::string, int> freq;
  for (const auto& s : sentences)
    for (const auto& w : s) ++freq[w];
  std::vector<std::string> kept;
  for (const auto& [w, c] : freq) {
    if (c >= unk_threshold) kept.push_back(w);
  }
  KNTrigramLM lm = uniform(kept);
  lm.discount_ = discount;

  std::set<std::tuple<int, int, int>> seen_trigrams;
  for (const auto& s : sentences) {
    std::vector<int> ids{kBosIdx, kBosIdx};
    for (const auto& w : s) ids.push_back(lm.lookup(w));
    ids.push_back(kEosIdx);
    for (std::size_t i = 2; i < ids.size(); ++i) {
      const int u = ids[i - 2], v = ids[i - 1], w = ids[i];
      double& c = lm.trigram_[key2(u, v)][w];
      if (c == 0.0) {
        ++lm.trigram_ctx_[key2(u, v)].distinct;
        seen_trigrams.emplace(u, v, w);
      }
      c += 1.0;
      ++lm.trigram_ctx_[key2(u, v)].total;
    }
  }
  // Continuation counts: N1+(. v w) is the number of distinct u before (v, w).
  for (const auto& [u, v, w] : seen_trigrams) {
    (void)u;
    double& c = lm.bigram_cont_[v][w];
    if (c == 0.0) ++lm.bigram_ctx_[v].distinct;
    c += 1.0;
    ++lm.bigram_ctx_[v].total;
  }
  for (const auto& [v, followers] : lm.bigram_cont_) {
    for (const auto& [w, c] : followers) {
      (void)c;
      double& n = lm.unigram_cont_[w];
      if (n == 0.0) ++lm.unigram_ctx_.distinct;
      n += 1.0;
      ++lm.unigram_ctx_.total;
    }
  }
  return lm;
}

int KNTrigramLM::lookup(const std::string& w) const {
  auto it = ids_.find(w);
  return it == ids_.end() ? kUnkIdx : it->second;
}

long double KNTrigramLM::p_unigram(int w) const {
  const long double base = 1.0L / static_cast<long double>(predictable_size());
  if (unigram_ctx_.total == 0.0) return base;
  auto it = unigram_cont_.find(w);
  const long double c = it == unigram_cont_.end() ? 0.0L : it->second;
  return std::max<long double>(c - discount_, 0.0L) / unigram_ctx_.total +
         static_cast<long double>(discount_) * unigram_ctx_.distinct / unigram_ctx_.total * base;
}

long double KNTrigramLM::p_bigram(int w, int v) const {
  const long double lower = p_unigram(w);
  auto ctx = bigram_ctx_.find(v);
  if (ctx == bigram_ctx_.end()) return lower;
  const auto& followers = bigram_cont_.at(v);
  auto it = followers.find(w);
  const long double c = it == followers.end() ? 0.0L : it->second;
  return std::max<long double>(c - discount_, 0.0L) / ctx->second.total +
         static_cast<long double>(discount_) * ctx->second.distinct / ctx->second.total * lower;
}

long double KNTrigramLM::p_trigram(int w, int u, int v) const {
  const long double lower = p_bigram(w, v);
  auto ctx = trigram_ctx_.find(key2(u, v));
  if (ctx == trigram_ctx_.end()) return lower;
  const auto& followers = trigram_.at(key2(u, v));
  auto it = followers.find(w);
  const long double c = it == followers.end() ? 0.0L : it->second;
  return std::max<long double>(c - discount_, 0.0L) / ctx->second.total +
         static_cast<long double>(discount_) * ctx->second.distinct / ctx->second.total * lower;
}

double KNTrigramLM::prob(const std::string& w, const std::string& u, const std::string& v) const {
  const int wi = lookup(w);
  if (wi == kBosIdx) return 0.0;
  return static_cast<double>(p_trigram(wi, lookup(u), lookup(v)));
}

std::vector<std::string> KNTrigramLM::predictable() const { return {words_.begin() + 1, words_.end()}; }

double KNTrigramLM::sentence_log_prob(const std::vector<std::string>& sentence, std::size_t* count) const {
  return static_cast<double>(sentence_log_prob_ext(sentence, count));
}

long double KNTrigramLM::sentence_log_prob_ext(const std::vector<std::string>& sentence, std::size_t* count) const {
  int u = kBosIdx, v = kBosIdx;
  long double lp = 0.0L;
  for (const auto& tok : sentence) {
    const int w = lookup(tok);
    lp += std::log(p_trigram(w, u, v));
    u = v;
    v = w;
  }
  lp += std::log(p_trigram(kEosIdx, u, v));
  if (count) *count = sentence.size() + 1;
  return lp;
}

double kn_perplexity(const KNTrigramLM& lm, const std::vector<std::vector<std::string>>& sentences) {
  if (sentences.empty()) throw ConfigError("kn_perplexity: no sentences");
  long double nll = 0.0L;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    std::size_t n = 0;
    nll -= lm.sentence_log_prob_ext(s, &n);
    tokens += n;
  }
  return static_cast<double>(std::exp(nll / static_cast<long double>(tokens)));
}

}  // namespace modln
