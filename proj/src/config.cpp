#include "modln/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "modln/errors.hpp"

namespace modln {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_as(const std::string& key, const std::string& value) {
  T v{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " +
                      (std::is_floating_point_v<T> ? "a number" : "an integer"));
  }
  return v;
}

std::string num(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
KeySpec numeric(std::string name, Access access) {
  return {name,
          [name, access](RunConfig& c, const std::string& v) { access(c) = parse_as<T>(name, v); },
          [access](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return num(access(const_cast<RunConfig&>(c)));
            } else {
              return std::to_string(access(const_cast<RunConfig&>(c)));
            }
          }};
}

template <typename Access>
KeySpec path_key(std::string name, Access access) {
  return {name, [access](RunConfig& c, const std::string& v) { access(c) = v; },
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    // model
    k.push_back(numeric<std::size_t>("dim_h", [](RunConfig& c) -> auto& { return c.model.dim_h; }));
    k.push_back(numeric<std::size_t>("n_layers", [](RunConfig& c) -> auto& { return c.model.n_layers; }));
    k.push_back(numeric<std::size_t>("n_heads", [](RunConfig& c) -> auto& { return c.model.n_heads; }));
    k.push_back(numeric<std::size_t>("ffn_dim", [](RunConfig& c) -> auto& { return c.model.ffn_dim; }));
    k.push_back(numeric<std::size_t>("max_seq_len", [](RunConfig& c) -> auto& { return c.model.max_seq_len; }));
    k.push_back({"num_labels",
                 [](RunConfig& c, const std::string& v) {
                   c.model.num_labels = parse_as<std::size_t>("num_labels", v);
                   c.synth.num_labels = static_cast<int>(c.model.num_labels);
                 },
                 [](const RunConfig& c) { return std::to_string(c.model.num_labels); }});
    k.push_back({"mask_mode", [](RunConfig& c, const std::string& v) { c.model.mask_mode = parse_mask_mode(v); },
                 [](const RunConfig& c) { return to_string(c.model.mask_mode); }});
    k.push_back({"norm_mode", [](RunConfig& c, const std::string& v) { c.model.norm_mode = parse_norm_mode(v); },
                 [](const RunConfig& c) { return to_string(c.model.norm_mode); }});
    k.push_back(numeric<double>("gain_offset", [](RunConfig& c) -> auto& { return c.model.gain_offset; }));
    k.push_back(numeric<double>("eps", [](RunConfig& c) -> auto& { return c.model.eps; }));
    k.push_back(numeric<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.model.seed; }));
    // training
    k.push_back(numeric<std::size_t>("epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    k.push_back(numeric<std::size_t>("batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    k.push_back(numeric<double>("lr", [](RunConfig& c) -> auto& { return c.train.adam.lr; }));
    k.push_back(numeric<double>("beta1", [](RunConfig& c) -> auto& { return c.train.adam.beta1; }));
    k.push_back(numeric<double>("beta2", [](RunConfig& c) -> auto& { return c.train.adam.beta2; }));
    k.push_back(numeric<double>("adam_eps", [](RunConfig& c) -> auto& { return c.train.adam.eps; }));
    k.push_back(numeric<double>("grad_clip", [](RunConfig& c) -> auto& { return c.train.grad_clip; }));
    k.push_back(numeric<double>("data_fraction", [](RunConfig& c) -> auto& { return c.train.data_fraction; }));
    k.push_back(numeric<std::uint64_t>("shuffle_seed", [](RunConfig& c) -> auto& { return c.train.shuffle_seed; }));
    // generation
    k.push_back(numeric<std::size_t>("k", [](RunConfig& c) -> auto& { return c.gen.k; }));
    k.push_back(numeric<std::size_t>("max_new_tokens", [](RunConfig& c) -> auto& { return c.gen.max_new_tokens; }));
    k.push_back(numeric<std::uint64_t>("gen_seed", [](RunConfig& c) -> auto& { return c.gen.seed; }));
    // synthetic corpus
    k.push_back(numeric<int>("markers_per_label", [](RunConfig& c) -> auto& { return c.synth.markers_per_label; }));
    k.push_back(numeric<int>("shared_vocab_size", [](RunConfig& c) -> auto& { return c.synth.shared_vocab_size; }));
    k.push_back(numeric<int>("pairs", [](RunConfig& c) -> auto& { return c.synth.pairs; }));
    k.push_back(numeric<int>("heldout_pairs", [](RunConfig& c) -> auto& { return c.heldout_pairs; }));
    k.push_back(numeric<int>("judge_pairs", [](RunConfig& c) -> auto& { return c.judge_pairs; }));
    k.push_back(numeric<int>("min_context_len", [](RunConfig& c) -> auto& { return c.synth.min_context_len; }));
    k.push_back(numeric<int>("max_context_len", [](RunConfig& c) -> auto& { return c.synth.max_context_len; }));
    k.push_back({"templates", [](RunConfig& c, const std::string& v) { c.synth.templates = split_commas(v); },
                 [](const RunConfig& c) {
                   std::string s;
                   for (const auto& t : c.synth.templates) s += (s.empty() ? "" : ",") + t;
                   return s;
                 }});
    k.push_back(numeric<double>("zipf_exponent", [](RunConfig& c) -> auto& { return c.synth.zipf_exponent; }));
    k.push_back(numeric<double>("copy_prob", [](RunConfig& c) -> auto& { return c.synth.copy_prob; }));
    k.push_back(numeric<std::uint64_t>("synth_seed", [](RunConfig& c) -> auto& { return c.synth.seed; }));
    // evaluation
    k.push_back(numeric<double>("kn_discount", [](RunConfig& c) -> auto& { return c.kn_discount; }));
    k.push_back(numeric<int>("unk_threshold", [](RunConfig& c) -> auto& { return c.unk_threshold; }));
    k.push_back({"stopwords", [](RunConfig& c, const std::string& v) { c.stopwords = v; },
                 [](const RunConfig& c) { return c.stopwords; }});
    k.push_back(numeric<std::size_t>("threads", [](RunConfig& c) -> auto& { return c.threads; }));
    k.push_back({"fractions",
                 [](RunConfig& c, const std::string& v) {
                   c.fractions.clear();
                   for (const auto& f : split_commas(v)) c.fractions.push_back(parse_as<double>("fractions", f));
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (double f : c.fractions) s += (s.empty() ? "" : ",") + num(f);
                   return s;
                 }});
    // gradient check
    k.push_back(numeric<double>("gradcheck_h", [](RunConfig& c) -> auto& { return c.gradcheck_h; }));
    k.push_back(numeric<std::size_t>("gradcheck_vocab", [](RunConfig& c) -> auto& { return c.gradcheck_vocab; }));
    // paths
    k.push_back(path_key("run_dir", [](RunConfig& c) -> auto& { return c.run_dir; }));
    k.push_back(path_key("train_data", [](RunConfig& c) -> auto& { return c.train_data; }));
    k.push_back(path_key("test_data", [](RunConfig& c) -> auto& { return c.test_data; }));
    k.push_back(path_key("judge_data", [](RunConfig& c) -> auto& { return c.judge_data; }));
    k.push_back(path_key("lexicon", [](RunConfig& c) -> auto& { return c.lexicon; }));
    k.push_back(path_key("checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }));
    return k;
  }();
  return keys;
}

const KeySpec& find_key(const std::string& name) {
  for (const auto& k : registry()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

std::filesystem::path or_default(const std::filesystem::path& p, const std::filesystem::path& dir, const char* file) {
  return p.empty() ? dir / file : p;
}

}  // namespace

void RunConfig::validate() const {
  ModelConfig m = model;
  m.vocab_size = 1;
  m.validate();
  if (model.max_seq_len < 5) throw ConfigError("max_seq_len must be at least 5 to hold one context and one response token");
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(train.data_fraction > 0.0 && train.data_fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
  if (!(train.adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(train.grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (gen.k < 1) throw ConfigError("k must be at least 1");
  if (gen.max_new_tokens < 1) throw ConfigError("max_new_tokens must be at least 1");
  if (synth.pairs < 1 || heldout_pairs < 1 || judge_pairs < 1) throw ConfigError("pairs, heldout_pairs and judge_pairs must be positive");
  if (!(kn_discount > 0.0 && kn_discount < 1.0)) throw ConfigError("kn_discount must lie in (0, 1)");
  if (unk_threshold < 1) throw ConfigError("unk_threshold must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (!(gradcheck_h > 0.0)) throw ConfigError("gradcheck_h must be positive");
  if (gradcheck_vocab <= static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError("gradcheck_vocab must exceed the " + std::to_string(kNumReserved) + " reserved tokens");
  }
  if (fractions.empty()) throw ConfigError("fractions must list at least one value");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
  }
  if (run_dir.empty()) throw ConfigError("run_dir must not be empty");
}

std::filesystem::path RunConfig::train_path() const { return or_default(train_data, run_dir, "train.tsv"); }
std::filesystem::path RunConfig::test_path() const { return or_default(test_data, run_dir, "test.tsv"); }
std::filesystem::path RunConfig::judge_path() const { return or_default(judge_data, run_dir, "judge.tsv"); }
std::filesystem::path RunConfig::lexicon_path() const { return or_default(lexicon, run_dir, "lexicon.tsv"); }
std::filesystem::path RunConfig::checkpoint_path() const { return or_default(checkpoint, run_dir, "checkpoint.txt"); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(k.name);
  return out;
}

RunConfig parse_config(const std::string& text, const std::vector<ConfigOverride>& overrides) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      find_key(key).set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& [key, value] : overrides) find_key(key).set(cfg, value);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : registry()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace modln
