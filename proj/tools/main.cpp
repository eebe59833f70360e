#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "monde/errors.hpp"

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kDiverged = 3, kIo = 4 };

struct Options {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> models;
};

monde::tools::ExperimentConfig resolve(const Options& o) {
  auto cfg = monde::tools::load_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed_set) cfg.seed = o.seed;
  cfg.source = monde::tools::config_json(cfg);
  return cfg;
}

int run(const std::string& command, const Options& o) {
  using namespace monde::tools;
  const auto cfg = resolve(o);
  const std::string model = o.models.empty() ? std::string() : o.models.front();
  if (command == "generate") {
    write_dataset(cfg, build_dataset(cfg));
  } else if (command == "train") {
    run_experiment(cfg, cfg.eval.metrics, {}, command);
  } else if (command == "eval") {
    if (model.empty()) throw monde::ConfigError("--model", "eval needs a saved model");
    run_experiment(cfg, cfg.eval.metrics, model, command);
  } else if (command == "tail-classify") {
    run_experiment(cfg, {"tail_classify"}, model, command);
  } else if (command == "tail-dep") {
    run_experiment(cfg, {"tail_dep"}, model, command);
  } else if (command == "mi") {
    run_experiment(cfg, {"mi"}, model, command);
  } else if (command == "pairwise-ll") {
    if (o.models.empty()) {
      run_experiment(cfg, {"pairwise_ll"}, {}, command);
    } else {
      run_pairwise(cfg, o.models);
    }
  }
  std::cout << "wrote " << cfg.output_dir << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monotone neural conditional density estimation"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "Generate and split a dataset"},
      {"train", "Train a model and compute the configured metrics"},
      {"eval", "Compute the configured metrics for a saved model"},
      {"tail-classify", "Tail-event ROC and precision-recall curves"},
      {"tail-dep", "Model and empirical tail-dependence curves"},
      {"mi", "Mutual information of response pairs by quadrature"},
      {"pairwise-ll", "Bivariate test log-likelihoods and win table"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "Seed (overrides seed)")->each([&](const std::string&) { o.seed_set = true; });
    if (name != "generate" && name != "train") {
      sub->add_option("--model", o.models, "Saved model file; pairwise-ll accepts several");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const monde::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const monde::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const monde::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const monde::FormatError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const monde::ChecksumFailure& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const monde::FamilyMismatch& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
