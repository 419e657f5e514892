#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "modln/errors.hpp"
#include "modln/pipeline.hpp"

namespace {

constexpr double kGradTolerance = 1e-4;

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

struct SubcommandArgs {
  std::string config;
  std::string out;
  std::map<std::string, std::string> values;  // config key -> flag value
};

CLI::App* add_subcommand(CLI::App& app, const std::string& name, const std::string& help, SubcommandArgs& args) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", args.config, "flat key = value configuration file")->required();
  sub->add_option("--out", args.out, "run directory (same as --run-dir)");
  for (const auto& key : modln::config_keys()) {
    sub->add_option("--" + dashed(key), args.values[key], "override config key " + key);
  }
  return sub;
}

modln::RunConfig resolve(const CLI::App& sub, const SubcommandArgs& args) {
  std::vector<modln::ConfigOverride> overrides;
  for (const auto& [key, value] : args.values) {
    if (sub.get_option("--" + dashed(key))->count() > 0) overrides.emplace_back(key, value);
  }
  if (!args.out.empty()) overrides.emplace_back("run_dir", args.out);
  return modln::load_config(args.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-conditioned transformer response generation with modulated layer normalization"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "write a synthetic emotion corpus and its marker lexicon"},
      {"train", "train a model on the configured training file"},
      {"generate", "sample one response per test context and label"},
      {"evaluate", "generate for the test set and write the metrics report"},
      {"gradcheck", "compare analytic and finite-difference gradients"},
      {"compare-fractions", "train and evaluate once per data fraction"},
  };
  std::map<std::string, SubcommandArgs> args;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) subs[name] = add_subcommand(app, name, help, args[name]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      const auto cfg = resolve(*sub, args[name]);
      if (name == "synth") {
        const auto out = modln::run_synth(cfg);
        std::printf("wrote %zu training, %zu test and %zu judge pairs to %s\n", out.train.samples.size(),
                    out.test.size(), out.judge.size(), cfg.run_dir.string().c_str());
      } else if (name == "train") {
        const auto result = modln::run_train(cfg);
        std::printf("trained on %zu pairs: loss %.6f -> %.6f\n", result.samples_used, result.initial_loss,
                    result.final_loss);
      } else if (name == "generate") {
        modln::run_generate(cfg);
        std::printf("wrote %s\n", (cfg.run_dir / "generations.tsv").string().c_str());
      } else if (name == "evaluate") {
        const auto result = modln::run_evaluate(cfg);
        std::cout << modln::format_report_table(result.report);
      } else if (name == "gradcheck") {
        const auto report = modln::run_gradcheck(cfg);
        std::printf("max relative error %.3e at %s[%zu] (analytic %.10e, numeric %.10e, %zu entries checked, "
                    "%zu below the %.1e resolution floor)\n",
                    report.max_rel_error, report.param.c_str(), report.index, report.analytic, report.numeric,
                    report.checked, report.below_floor, report.resolution_floor);
        return report.max_rel_error < kGradTolerance ? 0 : 1;
      } else if (name == "compare-fractions") {
        modln::run_compare_fractions(cfg);
        std::ifstream in(cfg.run_dir / "comparison.txt");
        std::cout << in.rdbuf();
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
