#include "modln/pipeline.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <random>

#include "modln/errors.hpp"

namespace fs = std::filesystem;

namespace modln {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string shortest(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

void prepare_run_dir(const RunConfig& cfg, const std::string& stage) {
  fs::create_directories(cfg.run_dir);
  write_text(cfg.run_dir / (stage + ".resolved.conf"), format_config(cfg));
  std::string seeds;
  seeds += "seed = " + std::to_string(cfg.model.seed) + "\n";
  seeds += "shuffle_seed = " + std::to_string(cfg.train.shuffle_seed) + "\n";
  seeds += "gen_seed = " + std::to_string(cfg.gen.seed) + "\n";
  seeds += "synth_seed = " + std::to_string(cfg.synth.seed) + "\n";
  write_text(cfg.run_dir / "seeds.txt", seeds);
}

int num_labels(const RunConfig& cfg) { return static_cast<int>(cfg.model.num_labels); }

Vocab vocab_from(std::span<const Sample> samples) {
  std::vector<std::vector<std::string>> lists;
  lists.reserve(samples.size() * 2);
  for (const auto& s : samples) {
    lists.push_back(s.context);
    lists.push_back(s.response);
  }
  return Vocab::build(lists);
}

struct EvalInputs {
  std::vector<Sample> train;
  std::vector<Sample> test;
  Judges judges;
  KNTrigramLM lm;
  std::set<std::string> stopwords;
};

EvalInputs load_eval_inputs(const RunConfig& cfg) {
  const int labels = num_labels(cfg);
  auto train = load_tsv(cfg.train_path(), labels);
  auto test = load_tsv(cfg.test_path(), labels);
  Judges judges{LexiconOracle(load_lexicon_tsv(cfg.lexicon_path(), labels)), std::nullopt};
  if (fs::exists(cfg.judge_path())) {
    judges.naive_bayes = BowClassifier::train(load_tsv(cfg.judge_path(), labels), cfg.model.num_labels);
  }
  std::vector<std::vector<std::string>> references;
  references.reserve(train.size());
  for (const auto& s : train) references.push_back(s.response);
  auto lm = KNTrigramLM::train(references, cfg.kn_discount, cfg.unk_threshold);
  return {std::move(train), std::move(test), std::move(judges), std::move(lm), resolve_stopwords(cfg.stopwords)};
}

void write_eval(const fs::path& dir, const EvalResult& result) {
  write_text(dir / "metrics.txt", format_report_kv(result.report));
  write_text(dir / "metrics_table.txt", format_report_table(result.report));
  write_text(dir / "details.tsv", format_details_tsv(result.details));
}

}  // namespace

fs::path vocab_path_for(const fs::path& checkpoint) { return checkpoint.parent_path() / "vocab.txt"; }

std::set<std::string> resolve_stopwords(const std::string& spec) {
  if (spec == "synthetic") {
    const auto& words = synthetic_function_words();
    return {words.begin(), words.end()};
  }
  if (spec == "english") return load_stopwords(default_stopword_path());
  return load_stopwords(spec);
}

SynthOutputs run_synth(const RunConfig& cfg) {
  prepare_run_dir(cfg, "synth");
  SynthOutputs out;
  out.train = synth_corpus(cfg.synth);

  SynthCorpusConfig held = cfg.synth;
  held.pairs = cfg.heldout_pairs;
  held.seed = cfg.synth.seed + 1;
  out.test = synth_corpus(held).samples;

  SynthCorpusConfig judge = cfg.synth;
  judge.pairs = cfg.judge_pairs;
  judge.seed = cfg.synth.seed + 2;
  out.judge = synth_corpus(judge).samples;

  write_corpus_tsv(cfg.run_dir / "train.tsv", out.train.samples);
  write_corpus_tsv(cfg.run_dir / "test.tsv", out.test);
  write_corpus_tsv(cfg.run_dir / "judge.tsv", out.judge);
  write_lexicon_tsv(cfg.run_dir / "lexicon.tsv", out.train.lexicon);
  return out;
}

TrainResult run_train(const RunConfig& cfg) {
  prepare_run_dir(cfg, "train");
  const auto samples = load_tsv(cfg.train_path(), num_labels(cfg));
  // Built from the whole file so every data fraction shares one vocabulary.
  const Vocab vocab = vocab_from(samples);
  vocab.save(cfg.run_dir / "vocab.txt");

  auto result = train(samples, vocab, cfg.model, cfg.train, [&](std::size_t epoch, const ModelWeights& w, double) {
    save_checkpoint(cfg.run_dir / ("checkpoint-epoch-" + std::to_string(epoch) + ".txt"), w);
  });
  save_checkpoint(cfg.run_dir / "checkpoint.txt", result.weights);

  std::string trace = "epoch\tloss\n";
  trace += "initial\t" + shortest(result.initial_loss) + "\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    trace += std::to_string(e + 1) + "\t" + shortest(result.epoch_losses[e]) + "\n";
  }
  trace += "final\t" + shortest(result.final_loss) + "\n";
  write_text(cfg.run_dir / "loss_trace.tsv", trace);
  return result;
}

void run_generate(const RunConfig& cfg) {
  prepare_run_dir(cfg, "generate");
  const auto weights = load_checkpoint(cfg.checkpoint_path());
  const auto vocab = Vocab::load(vocab_path_for(cfg.checkpoint_path()));
  const auto test = load_tsv(cfg.test_path(), num_labels(cfg));
  const std::size_t labels = weights.config.num_labels;

  std::string out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto context = vocab.encode(test[i].context);
    for (std::size_t l = 0; l < labels; ++l) {
      GenerationConfig gen = cfg.gen;
      gen.seed = sample_seed(cfg.gen.seed, i * labels + l);
      const auto ids = generate(context, EmotionLabel::make(static_cast<int>(l), labels), weights, gen);
      const auto tokens = vocab.decode(ids);
      out += detokenize(test[i].context) + "\t" + std::to_string(l) + "\t" + detokenize(tokens) + "\n";
    }
  }
  write_text(cfg.run_dir / "generations.tsv", out);
}

EvalResult run_evaluate(const RunConfig& cfg) {
  prepare_run_dir(cfg, "evaluate");
  const auto weights = load_checkpoint(cfg.checkpoint_path());
  const auto vocab = Vocab::load(vocab_path_for(cfg.checkpoint_path()));
  const auto in = load_eval_inputs(cfg);
  auto result = evaluate_run(weights, vocab, in.test, in.judges, in.lm, cfg.gen, in.stopwords, cfg.threads);
  write_eval(cfg.run_dir, result);
  return result;
}

std::vector<FractionRun> run_compare_fractions(const RunConfig& cfg) {
  prepare_run_dir(cfg, "compare-fractions");
  const auto in = load_eval_inputs(cfg);
  const Vocab vocab = vocab_from(in.train);
  auto runs = data_efficiency_compare(in.train, vocab, in.test, cfg.model, cfg.train, cfg.fractions, in.judges,
                                      in.lm, cfg.gen, in.stopwords, cfg.threads);

  std::vector<std::pair<std::string, MetricsReport>> columns;
  for (const auto& run : runs) {
    const std::string name = "fraction-" + shortest(run.fraction);
    const fs::path dir = cfg.run_dir / name;
    fs::create_directories(dir);
    vocab.save(dir / "vocab.txt");
    save_checkpoint(dir / "checkpoint.txt", run.training.weights);
    write_eval(dir, run.eval);
    columns.emplace_back(name, run.eval.report);
  }
  write_text(cfg.run_dir / "comparison.txt", format_comparison(columns));
  return runs;
}

void randomize_parameters(const ModelWeights& weights, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& [name, p] : weights.named_parameters()) {
    for (double& v : p.data()) v = dist(rng);
  }
}

GradCheckReport model_gradcheck(ModelConfig model, std::size_t vocab_size, double h, std::uint64_t seed) {
  constexpr std::size_t kWidth = 8;
  if (vocab_size < static_cast<std::size_t>(kNumReserved) + 3) {
    throw ConfigError("gradcheck: vocabulary needs at least 3 non-reserved tokens");
  }
  std::vector<std::string> words;
  for (std::size_t i = 0; i + kNumReserved < vocab_size; ++i) words.push_back("w" + std::to_string(i));
  const Vocab vocab = Vocab::build({words});

  model.vocab_size = vocab.size();
  model.max_seq_len = kWidth;
  model.validate();
  const auto weights = ModelWeights::init(model);
  randomize_parameters(weights, seed);

  // One full row and one row with a padded tail.
  const int l1 = model.num_labels > 1 ? 1 : 0;
  const std::vector<Sample> samples = {
      {{words[0], words[1], words[2]}, {words[1], words.back()}, 0},
      {{words[2], words[0]}, {words.back()}, l1},
  };
  const Batch batch = make_batch(samples, vocab, kWidth);
  auto params = weights.named_parameters();
  return finite_diff_check([&] { return teacher_forcing_loss(weights, batch); }, params, h);
}

GradCheckReport run_gradcheck(const RunConfig& cfg) {
  prepare_run_dir(cfg, "gradcheck");
  const auto report = model_gradcheck(cfg.model, cfg.gradcheck_vocab, cfg.gradcheck_h, cfg.model.seed);
  write_text(cfg.run_dir / "gradcheck.txt",
             "max_rel_error = " + shortest(report.max_rel_error) + "\nparam = " + report.param +
                 "\nindex = " + std::to_string(report.index) + "\nchecked = " + std::to_string(report.checked) +
                 "\nresolution_floor = " + shortest(report.resolution_floor) +
                 "\nbelow_floor = " + std::to_string(report.below_floor) + "\n");
  return report;
}

}  // namespace modln
