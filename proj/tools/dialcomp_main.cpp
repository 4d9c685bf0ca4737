#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dialcomp/errors.hpp"
#include "dialcomp/experiment.hpp"
#include "dialcomp/version.hpp"

namespace {

using dialcomp::ExperimentConfig;

// Unmatched "--section.key value" (or "--section.key=value") tokens become
// config overrides layered on top of the config file.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> overrides;
  for (size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos)
      throw dialcomp::UsageError("unrecognized argument '" + tok + "'");
    std::string body = tok.substr(2);
    if (body.find('=') != std::string::npos) {
      overrides.push_back(body);
    } else {
      if (i + 1 >= extras.size())
        throw dialcomp::UsageError("override '" + tok + "' is missing a value");
      overrides.push_back(body + "=" + extras[++i]);
    }
  }
  return overrides;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialcomp: task-compositionality workbench for dialogue generation"};
  app.set_version_flag("--version", dialcomp::kVersion);
  app.require_subcommand(1);

  struct SubArgs {
    std::string config, corpus, out;
    std::string seed;
    CLI::App* sub = nullptr;
  };
  const std::vector<std::pair<std::string, std::string>> subcommands = {
      {"preprocess", "parse the corpus, derive task labels and write splits"},
      {"augment", "generate synthetic multi-task dialogues from the train split"},
      {"train", "train the generator (with discriminator head) on the train split"},
      {"eval", "zero-shot BLEU evaluation of a checkpoint"},
      {"ablation", "train once per mixture row and report BLEU per row"},
      {"alpha-sweep", "train once per alpha value and report BLEU per run"},
      {"overlap", "n-gram overlap diagnostics across split pairings"},
      {"gradcheck", "finite-difference check of the analytic gradients"},
  };
  std::vector<SubArgs> args(subcommands.size());
  for (size_t i = 0; i < subcommands.size(); ++i) {
    CLI::App* sub = app.add_subcommand(subcommands[i].first, subcommands[i].second);
    sub->allow_extras();
    sub->add_option("--config", args[i].config, "JSON config file");
    sub->add_option("--corpus", args[i].corpus, "corpus JSON file (overrides paths.corpus)");
    sub->add_option("--out", args[i].out, "output directory (overrides paths.out_dir)");
    sub->add_option("--seed", args[i].seed, "root seed (overrides root_seed)");
    args[i].sub = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (size_t i = 0; i < subcommands.size(); ++i) {
      if (!args[i].sub->parsed()) continue;
      auto overrides = collect_overrides(args[i].sub->remaining());
      ExperimentConfig cfg = ExperimentConfig::load(args[i].config, overrides);
      if (!args[i].corpus.empty()) cfg.apply_override("paths.corpus=" + args[i].corpus);
      if (!args[i].out.empty()) cfg.apply_override("paths.out_dir=" + args[i].out);
      if (!args[i].seed.empty()) cfg.apply_override("root_seed=" + args[i].seed);

      const std::string& name = subcommands[i].first;
      if (name == "preprocess") return dialcomp::run_preprocess(cfg);
      if (name == "augment") return dialcomp::run_augment(cfg);
      if (name == "train") return dialcomp::run_train(cfg);
      if (name == "eval") return dialcomp::run_eval(cfg);
      if (name == "ablation") return dialcomp::run_ablation(cfg);
      if (name == "alpha-sweep") return dialcomp::run_alpha_sweep(cfg);
      if (name == "overlap") return dialcomp::run_overlap(cfg);
      if (name == "gradcheck") return dialcomp::run_gradcheck(cfg);
    }
    std::cerr << "error: no subcommand selected\n";
    return 1;
  } catch (const dialcomp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const dialcomp::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
