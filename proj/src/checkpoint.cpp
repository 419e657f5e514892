#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "modln/errors.hpp"
#include "modln/train.hpp"

namespace modln {

namespace {

constexpr const char* kFormatTag = "MODLN-CKPT-1";

void append_double(std::string& out, double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

std::vector<std::pair<std::string, std::string>> config_fields(const ModelConfig& c) {
  auto num = [](double v) {
    std::string s;
    append_double(s, v);
    return s;
  };
  return {{"vocab_size", std::to_string(c.vocab_size)},
          {"dim_h", std::to_string(c.dim_h)},
          {"n_layers", std::to_string(c.n_layers)},
          {"n_heads", std::to_string(c.n_heads)},
          {"ffn_dim", std::to_string(c.ffn_dim)},
          {"max_seq_len", std::to_string(c.max_seq_len)},
          {"num_labels", std::to_string(c.num_labels)},
          {"mask_mode", to_string(c.mask_mode)},
          {"norm_mode", to_string(c.norm_mode)},
          {"gain_offset", num(c.gain_offset)},
          {"eps", num(c.eps)},
          {"seed", std::to_string(c.seed)}};
}

template <typename T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("checkpoint: bad value '" + s + "' for " + what);
  return v;
}

}  // namespace

std::string checkpoint_text(const ModelWeights& weights) {
  std::string out = kFormatTag;
  out += '\n';
  for (const auto& [key, value] : config_fields(weights.config)) out += "config " + key + " " + value + "\n";
  for (const auto& [name, t] : weights.named_parameters()) {
    out += "tensor " + name + " " + std::to_string(t.rank());
    for (std::size_t d : t.shape()) out += " " + std::to_string(d);
    for (double v : t.data()) {
      out += ' ';
      append_double(out, v);
    }
    out += '\n';
  }
  out += "end\n";
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << checkpoint_text(weights);
}

ModelWeights parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kFormatTag) throw ParseError("checkpoint: missing MODLN-CKPT-1 tag");

  std::map<std::string, std::string> cfg;
  std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key, value;
      ls >> key >> value;
      cfg[key] = value;
    } else if (kind == "tensor") {
      std::string name;
      std::size_t rank = 0;
      ls >> name >> rank;
      Shape shape(rank);
      for (auto& d : shape) ls >> d;
      std::vector<double> values(shape_numel(shape));
      std::string tok;
      for (auto& v : values) {
        if (!(ls >> tok)) throw ParseError("checkpoint: tensor " + name + " is truncated");
        v = parse_number<double>(tok, name);
      }
      if (ls >> tok) throw ParseError("checkpoint: tensor " + name + " has extra values");
      tensors[name] = {std::move(shape), std::move(values)};
    } else if (kind == "end") {
      ended = true;
      break;
    } else if (!kind.empty()) {
      throw ParseError("checkpoint: unexpected record '" + kind + "'");
    }
  }
  if (!ended) throw ParseError("checkpoint: missing end marker");

  auto get = [&](const std::string& key) -> const std::string& {
    auto it = cfg.find(key);
    if (it == cfg.end()) throw ParseError("checkpoint: missing config " + key);
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = parse_number<std::size_t>(get("vocab_size"), "vocab_size");
  c.dim_h = parse_number<std::size_t>(get("dim_h"), "dim_h");
  c.n_layers = parse_number<std::size_t>(get("n_layers"), "n_layers");
  c.n_heads = parse_number<std::size_t>(get("n_heads"), "n_heads");
  c.ffn_dim = parse_number<std::size_t>(get("ffn_dim"), "ffn_dim");
  c.max_seq_len = parse_number<std::size_t>(get("max_seq_len"), "max_seq_len");
  c.num_labels = parse_number<std::size_t>(get("num_labels"), "num_labels");
  c.mask_mode = parse_mask_mode(get("mask_mode"));
  c.norm_mode = parse_norm_mode(get("norm_mode"));
  c.gain_offset = parse_number<double>(get("gain_offset"), "gain_offset");
  c.eps = parse_number<double>(get("eps"), "eps");
  c.seed = parse_number<std::uint64_t>(get("seed"), "seed");

  ModelWeights w = ModelWeights::init(c);
  auto params = w.named_parameters();
  if (params.size() != tensors.size()) {
    throw ParseError("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                     std::to_string(tensors.size()));
  }
  for (auto& [name, t] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint: missing tensor " + name);
    if (it->second.first != t.shape()) {
      throw ParseError("checkpoint: tensor " + name + " has shape " + shape_str(it->second.first) + ", expected " +
                       shape_str(t.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), t.data().begin());
  }
  return w;
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace modln
