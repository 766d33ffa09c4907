#pragma once

// Batch pipeline behind the command-line tool: simulate, train, finetune,
// decode, eval. Each command reads a RunConfig and writes its artifacts plus
// a JSON manifest into the output directory.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "novoseq/decoding.hpp"
#include "novoseq/errors.hpp"
#include "novoseq/network.hpp"
#include "novoseq/spectra.hpp"

namespace novoseq {

// Invalid configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct TrainingSettings {
  std::uint64_t steps = 2000;
  std::size_t batch_size = 8;
  double lr = 5e-4;
  std::uint64_t warmup = 100;
  std::uint64_t finetune_epochs = 200;
  double finetune_lr = 1e-4;
  bool blocked = true;
  std::uint64_t checkpoint_every = 500;  // 0: only at the end
};

struct SimulationSettings {
  std::size_t train_count = 100;
  std::size_t test_count = 20;
  std::size_t min_length = 5;
  std::size_t max_length = 12;
  SimulationConfig noise;
};

struct PathSettings {
  std::string corpus;       // training MGF
  std::string test;         // MGF to decode; defaults to corpus
  std::string checkpoint;   // input checkpoint
  std::string predictions;  // decode CSV to evaluate
  std::string truth;        // MGF with SEQ lines for eval
};

struct RunConfig {
  ModelConfig model;
  TrainingSettings training;
  SimulationSettings simulation;
  DecodeOptions decoding;
  PathSettings paths;
  std::optional<std::uint64_t> seed;
  std::string out = ".";

  // Every key as "section.key" → text, after defaults, file and overrides.
  std::map<std::string, std::string> values;

  std::uint64_t require_seed() const;
  // FNV-1a 64 of the canonical "section.key=value" lines.
  std::string hash() const;
};

// Defaults, then the INI file (if non-empty), then "section.key=value"
// overrides. Unknown keys and malformed values throw ConfigError.
RunConfig load_run_config(const std::string& ini_path, const std::vector<std::string>& overrides);

// Default configuration as INI text.
std::string default_config_text();

std::uint64_t fnv1a64(std::string_view bytes);

// Draws a residue string of uniform length in [min, max] with uniform residues.
Peptide random_peptide(std::uint64_t seed, std::size_t min_length, std::size_t max_length,
                       const AminoAcidTable& table);

void cmd_simulate(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_finetune(const RunConfig& cfg);
void cmd_decode(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Runs `fn`, reporting failures on stderr and mapping them to exit codes.
int run_guarded(const std::string& command, void (*fn)(const RunConfig&), const RunConfig& cfg);
int exit_code_for(const std::exception& e);

}  // namespace novoseq
