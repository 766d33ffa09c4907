// novoseq: simulate → train → finetune → decode → eval

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "novoseq/pipeline.hpp"

namespace {

struct Shared {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

// A flag that maps onto one config key.
struct KeyFlag {
  std::string key;
  std::string value;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--config", s.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", s.seed, "Random seed (required unless set in the config)");
  cmd->add_option("--out", s.out, "Output directory");
  cmd->add_option("--set", s.sets, "Override a config key: section.key=value")
      ->allow_extra_args(false);
}

void add_key(CLI::App* cmd, std::vector<KeyFlag>& flags, const std::string& name,
             const std::string& key, const std::string& help) {
  flags.push_back({key, {}});
  cmd->add_option(name, flags.back().value, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"De novo peptide sequencing on synthetic spectra"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "novoseq 0.1.0");

  Shared shared;
  // Reserved so pointers handed to CLI11 stay valid.
  std::vector<KeyFlag> flags;
  flags.reserve(32);

  using novoseq::RunConfig;
  struct Command {
    CLI::App* app;
    void (*fn)(const RunConfig&);
  };
  std::vector<Command> commands;

  auto* sim = app.add_subcommand("simulate", "Write train.mgf and test.mgf of simulated spectra");
  add_key(sim, flags, "--count", "simulation.train_count", "Training spectra");
  add_key(sim, flags, "--test-count", "simulation.test_count", "Test spectra");
  add_key(sim, flags, "--min-length", "simulation.min_length", "Shortest peptide");
  add_key(sim, flags, "--max-length", "simulation.max_length", "Longest peptide");
  commands.push_back({sim, novoseq::cmd_simulate});

  auto* train = app.add_subcommand("train", "Joint stage-1 training; writes stage1.ckpt");
  add_key(train, flags, "--corpus", "paths.corpus", "Training MGF with SEQ lines");
  add_key(train, flags, "--checkpoint", "paths.checkpoint", "Resume from this checkpoint");
  add_key(train, flags, "--steps", "training.steps", "Total stage-1 steps");
  add_key(train, flags, "--batch-size", "training.batch_size", "Spectra per step");
  commands.push_back({train, novoseq::cmd_train});

  auto* ft = app.add_subcommand("finetune", "Stage-2 AT fine-tuning; writes stage2.ckpt");
  add_key(ft, flags, "--corpus", "paths.corpus", "Training MGF with SEQ lines");
  add_key(ft, flags, "--checkpoint", "paths.checkpoint", "Stage-1 checkpoint");
  add_key(ft, flags, "--epochs", "training.finetune_epochs", "Fine-tuning epochs");
  add_key(ft, flags, "--batch-size", "training.batch_size", "Spectra per step");
  add_key(ft, flags, "--blocked", "training.blocked", "Stop gradients into NAT features");
  commands.push_back({ft, novoseq::cmd_finetune});

  auto* dec = app.add_subcommand("decode", "Decode spectra; writes predictions.csv");
  add_key(dec, flags, "--checkpoint", "paths.checkpoint", "Model checkpoint");
  add_key(dec, flags, "--mgf", "paths.test", "Spectra to decode");
  add_key(dec, flags, "--decoder", "decoding.decoder", "at-greedy | at-beam | nat-pmc");
  add_key(dec, flags, "--beam", "decoding.beam", "Beam width for at-beam");
  add_key(dec, flags, "--tol", "decoding.tolerance", "Mass tolerance in Da for nat-pmc");
  add_key(dec, flags, "--max-states", "decoding.max_states", "nat-pmc states per step (0 = all)");
  commands.push_back({dec, novoseq::cmd_decode});

  auto* ev = app.add_subcommand("eval", "Score predictions; writes summary, rows and curve CSVs");
  add_key(ev, flags, "--predictions", "paths.predictions", "predictions.csv from decode");
  add_key(ev, flags, "--truth", "paths.truth", "MGF with SEQ lines");
  commands.push_back({ev, novoseq::cmd_eval});

  auto* show = app.add_subcommand("config", "Print the default configuration");

  for (const Command& c : commands) add_shared(c.app, shared);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? novoseq::kExitOk : novoseq::kExitUsage;
  }

  if (show->parsed()) {
    std::cout << novoseq::default_config_text();
    return novoseq::kExitOk;
  }

  for (const Command& c : commands) {
    if (!c.app->parsed()) continue;
    std::vector<std::string> overrides;
    for (const KeyFlag& f : flags)
      if (!f.value.empty()) overrides.push_back(f.key + "=" + f.value);
    overrides.insert(overrides.end(), shared.sets.begin(), shared.sets.end());
    if (shared.seed) overrides.push_back("run.seed=" + std::to_string(*shared.seed));
    if (!shared.out.empty()) overrides.push_back("run.out=" + shared.out);
    RunConfig cfg;
    try {
      cfg = novoseq::load_run_config(shared.config, overrides);
    } catch (const std::exception& e) {
      std::cerr << "novoseq " << c.app->get_name() << ": error: " << e.what() << "\n";
      return novoseq::exit_code_for(e);
    }
    return novoseq::run_guarded(c.app->get_name(), c.fn, cfg);
  }
  return novoseq::kExitUsage;
}
