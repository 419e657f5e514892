#include "modln/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "modln/errors.hpp"

namespace modln {

namespace {

const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[SEP]", "[BOS]", "[EOS]"};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t end = line.find('\t', start);
    if (end == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, end - start));
    start = end + 1;
  }
}

int parse_label(std::string_view field, int num_labels, std::size_t line_no) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": label '" + std::string(field) + "' is not an integer");
  }
  if (v < 0 || v >= num_labels) {
    throw ParseError("line " + std::to_string(line_no) + ": label " + std::to_string(v) + " outside [0, " +
                     std::to_string(num_labels) + ")");
  }
  return v;
}

std::string join(std::span<const std::string> tokens) { return detokenize(tokens); }

// Two-syllable pseudo-words; the multiplier is coprime with the table size,
// so indices map to distinct words.
constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";
constexpr std::size_t kSyllables = kConsonants.size() * kVowels.size();
constexpr std::size_t kMaxContentWords = kSyllables * kSyllables;

std::string pseudo_word(std::size_t i) {
  const std::size_t idx = (i * 1009 + 17) % kMaxContentWords;
  auto syllable = [](std::size_t s) {
    return std::string{kConsonants[s / kVowels.size()], kVowels[s % kVowels.size()]};
  };
  return syllable(idx / kSyllables) + syllable(idx % kSyllables);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocab::Vocab() {
  for (const auto& t : kReserved) add(t);
}

void Vocab::add(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& token_lists) {
  std::set<std::string> distinct;
  for (const auto& list : token_lists) distinct.insert(list.begin(), list.end());
  Vocab v;
  for (const auto& t : distinct) v.add(t);
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  auto lines = split_lines(text);
  if (lines.size() < kReserved.size()) throw ParseError(path.string() + ": vocabulary is missing reserved tokens");
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (lines[i] != kReserved[i]) {
      throw ParseError(path.string() + ": line " + std::to_string(i + 1) + " should be " + kReserved[i]);
    }
  }
  Vocab v;
  for (std::size_t i = kReserved.size(); i < lines.size(); ++i) {
    std::string tok(lines[i]);
    if (tok.empty() || v.contains(tok)) {
      throw ParseError(path.string() + ": line " + std::to_string(i + 1) + ": empty or duplicate token");
    }
    v.add(tok);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::string text;
  for (const auto& t : tokens_) text += t + "\n";
  write_file(path, text);
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocab: id " + std::to_string(id) + " outside [0, " + std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

const std::vector<std::string>& synthetic_function_words() {
  static const std::vector<std::string> words = {"the", "a",    "to",   "and", "of", "i",  "you",
                                                 "it",  "is",   "that", "so",  "my", "this", "just",
                                                 "we",  "be",   "for",  "on",  "with", "me"};
  return words;
}

SynthCorpus synth_corpus(const SynthCorpusConfig& cfg) {
  const auto& function_words = synthetic_function_words();
  if (cfg.num_labels < 1 || cfg.markers_per_label < 1 || cfg.pairs < 0) {
    throw ConfigError("synth_corpus: num_labels and markers_per_label must be positive");
  }
  const int content_count = cfg.shared_vocab_size - static_cast<int>(function_words.size());
  if (content_count < 1 || static_cast<std::size_t>(content_count) > kMaxContentWords) {
    throw ConfigError("synth_corpus: shared_vocab_size " + std::to_string(cfg.shared_vocab_size) +
                      " leaves no room for disjoint content words (need between " +
                      std::to_string(function_words.size() + 1) + " and " +
                      std::to_string(function_words.size() + kMaxContentWords) + ")");
  }
  if (cfg.min_context_len < 1 || cfg.max_context_len < cfg.min_context_len) {
    throw ConfigError("synth_corpus: invalid context length range");
  }
  if (cfg.templates.empty()) throw ConfigError("synth_corpus: no response templates");
  if (!(cfg.zipf_exponent >= 0.0)) throw ConfigError("synth_corpus: zipf_exponent must be non-negative");
  if (!(cfg.copy_prob >= 0.0 && cfg.copy_prob <= 1.0)) throw ConfigError("synth_corpus: copy_prob must lie in [0, 1]");
  for (const auto& t : cfg.templates) {
    const auto f = std::count(t.begin(), t.end(), 'F');
    const auto m = std::count(t.begin(), t.end(), 'M');
    const bool alphabet_ok = std::all_of(t.begin(), t.end(), [](char ch) { return ch == 'F' || ch == 'M' || ch == 'C'; });
    if (!alphabet_ok || f < 2 || m < 1) {
      throw ConfigError("synth_corpus: template '" + t + "' needs >= 2 F, >= 1 M and only F/M/C");
    }
  }

  SynthCorpus corpus;
  corpus.function_words = function_words;
  for (int i = 0; i < content_count; ++i) corpus.content_words.push_back(pseudo_word(static_cast<std::size_t>(i)));
  corpus.lexicon.resize(static_cast<std::size_t>(cfg.num_labels));
  for (int l = 0; l < cfg.num_labels; ++l) {
    for (int j = 0; j < cfg.markers_per_label; ++j) {
      corpus.lexicon[static_cast<std::size_t>(l)].push_back("e" + std::to_string(l) + "m" + std::to_string(j));
    }
  }

  std::mt19937_64 rng(cfg.seed);
  auto pick = [&rng](const std::vector<std::string>& from) -> const std::string& {
    std::uniform_int_distribution<std::size_t> d(0, from.size() - 1);
    return from[d(rng)];
  };
  auto zipf = [&cfg](std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t r = 0; r < n; ++r) w[r] = std::pow(static_cast<double>(r + 1), -cfg.zipf_exponent);
    return std::discrete_distribution<std::size_t>(w.begin(), w.end());
  };
  auto function_dist = zipf(function_words.size());
  auto content_dist = zipf(corpus.content_words.size());
  auto pick_function = [&]() -> const std::string& { return function_words[function_dist(rng)]; };
  auto pick_content = [&]() -> const std::string& { return corpus.content_words[content_dist(rng)]; };
  std::uniform_int_distribution<int> ctx_len(cfg.min_context_len, cfg.max_context_len);
  std::uniform_int_distribution<std::size_t> tmpl(0, cfg.templates.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  corpus.samples.reserve(static_cast<std::size_t>(cfg.pairs));
  for (int i = 0; i < cfg.pairs; ++i) {
    Sample s;
    s.label = i % cfg.num_labels;
    const int n = ctx_len(rng);
    std::vector<std::string> context_content;
    for (int k = 0; k < n; ++k) {
      if (coin(rng) < 0.3) {
        s.context.push_back(pick_function());
      } else {
        s.context.push_back(pick_content());
        context_content.push_back(s.context.back());
      }
    }
    const auto& markers = corpus.lexicon[static_cast<std::size_t>(s.label)];
    for (char slot : cfg.templates[tmpl(rng)]) {
      if (slot == 'F') {
        s.response.push_back(pick_function());
      } else if (slot == 'M') {
        s.response.push_back(pick(markers));
      } else if (!context_content.empty() && coin(rng) < cfg.copy_prob) {
        s.response.push_back(pick(context_content));
      } else {
        s.response.push_back(pick_content());
      }
    }
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

void write_corpus_tsv(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::string text;
  for (const auto& s : samples) {
    text += join(s.context) + "\t" + join(s.response) + "\t" + std::to_string(s.label) + "\n";
  }
  write_file(path, text);
}

std::vector<Sample> parse_tsv(std::string_view text, int num_labels) {
  std::vector<Sample> out;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto fields = split_tabs(lines[i]);
    if (fields.size() != 3) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    Sample s;
    s.context = tokenize(fields[0]);
    s.response = tokenize(fields[1]);
    if (s.context.empty() || s.response.empty() || fields[2].empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty field");
    }
    s.label = parse_label(fields[2], num_labels, line_no);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_tsv(const std::filesystem::path& path, int num_labels) {
  try {
    return parse_tsv(read_file(path), num_labels);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_lexicon_tsv(const std::filesystem::path& path, const MarkerLexicon& lexicon) {
  std::string text;
  for (std::size_t l = 0; l < lexicon.size(); ++l) {
    for (const auto& m : lexicon[l]) text += std::to_string(l) + "\t" + m + "\n";
  }
  write_file(path, text);
}

MarkerLexicon load_lexicon_tsv(const std::filesystem::path& path, int num_labels) {
  MarkerLexicon lex(static_cast<std::size_t>(num_labels));
  auto text = read_file(path);
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto fields = split_tabs(lines[i]);
    if (fields.size() != 2 || fields[1].empty()) {
      throw ParseError(path.string() + ": line " + std::to_string(i + 1) + ": expected label TAB marker");
    }
    const int l = parse_label(fields[0], num_labels, i + 1);
    lex[static_cast<std::size_t>(l)].emplace_back(fields[1]);
  }
  return lex;
}

ModelInput Batch::to_model_input() const {
  ModelInput in;
  in.batch = rows;
  in.seq_len = width;
  in.tokens = ids;
  in.context_len = context_len;
  in.labels = labels;
  in.pad.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) in.pad[i] = ids[i] == kPadId ? 1 : 0;
  return in;
}

KeptLengths fit_lengths(std::size_t context_len, std::size_t response_len, std::size_t max_seq_len) {
  if (max_seq_len < 5) {
    throw ConfigError("max_seq_len " + std::to_string(max_seq_len) +
                      " cannot hold [BOS] + context + [SEP] + response + [EOS]");
  }
  const std::size_t budget = max_seq_len - 3;
  if (context_len + response_len <= budget) return {context_len, response_len};
  // The context keeps at least half the budget (or all of itself), the
  // response takes the rest.
  const std::size_t ctx = std::min(context_len, std::max(budget / 2, budget - std::min(budget, response_len)));
  return {ctx, std::min(response_len, budget - ctx)};
}

Batch make_batch(std::span<const Sample> samples, const Vocab& vocab, std::size_t max_seq_len) {
  Batch b;
  b.rows = samples.size();
  b.width = max_seq_len;
  b.ids.assign(b.rows * b.width, kPadId);
  b.loss_mask.assign(b.rows * b.width, 0);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const Sample& s = samples[r];
    if (s.context.empty() || s.response.empty()) throw ParseError("make_batch: sample with empty context or response");
    const KeptLengths kept = fit_lengths(s.context.size(), s.response.size(), max_seq_len);
    int* row = b.ids.data() + r * b.width;
    std::uint8_t* mask = b.loss_mask.data() + r * b.width;
    std::size_t pos = 0;
    row[pos++] = kBosId;
    for (std::size_t i = s.context.size() - kept.context; i < s.context.size(); ++i) row[pos++] = vocab.id(s.context[i]);
    row[pos++] = kSepId;
    b.context_len.push_back(pos);
    for (std::size_t i = 0; i < kept.response; ++i) {
      mask[pos] = 1;
      row[pos++] = vocab.id(s.response[i]);
    }
    mask[pos] = 1;
    row[pos++] = kEosId;
    b.labels.push_back(s.label);
  }
  return b;
}

}  // namespace modln
