#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ec2lab/game/game.hpp"
#include "ec2lab/models/model.hpp"
#include "ec2lab/policy/policy.hpp"
#include "ec2lab/trajlm/trajlm.hpp"

namespace ec2lab::cli {

// Schema or value violation in a run configuration; messages carry the
// offending field path ($.section.key). Maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A stage input that an upstream command should have produced is absent.
// Messages name that command. Maps to exit code 3.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One run = one output directory. Every stage reads what it needs from the
// directory, writes only its own subdirectory, and archives the configuration
// it ran under, so a finished directory is self-describing.
struct RunConfig {
  uint64_t seed = 7;
  std::string out;  // empty: EC2LAB_OUT, then ./ec2lab_out

  // data
  size_t episodes = 3000;
  double noise_std = 0.0;
  int vocab_size = 96;

  // model widths and the game hyperparameters; the message vocabulary and
  // length live under $.game in the file but are model dimensions here.
  models::ModelConfig model;
  game::GameConfig game;

  trajlm::PretrainConfig pretrain;

  // policy run matrix
  policy::PolicyConfig policy_train;
  std::vector<size_t> demo_sizes{5, 10, 25};
  std::vector<uint64_t> policy_seeds{0, 1, 2};
  std::vector<std::string> policy_tasks;  // empty: every task
  std::string prompt_mode = "nl";
  std::string variant = "pretrained";  // "pretrained" | "random"

  // analysis
  double ridge = 1e-6;
  double eval_frac = 0.2;
  size_t min_support = 3;

  std::vector<std::string> sweep_sizes{"micro", "mini", "base"};

  // The configuration text archived next to the outputs: the file's bytes
  // when one was given, the canonical rendering otherwise.
  std::string raw_text;
};

RunConfig default_config();

// Strict parse: unknown sections or keys, wrong types, and out-of-range
// values all raise ConfigError with the field path. Absent keys keep their
// defaults, so a partial file is a valid override set.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Canonical full rendering of a configuration (every key, fixed order).
std::string canonical_config_json(const RunConfig& cfg);

// Output directory resolution: cfg.out, then $EC2LAB_OUT, then ./ec2lab_out.
std::string resolve_out(const RunConfig& cfg);

// Pipeline stages. Each validates its slice of the configuration
// (ConfigError), checks its inputs (MissingArtifact naming the producing
// command), runs deterministically from cfg.seed, and writes its outputs
// atomically. Numeric failures surface as num::NumericError.
void cmd_gen_data(const RunConfig& cfg);
void cmd_train_game(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
void cmd_train_policy(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_analyze(const RunConfig& cfg);
void cmd_sweep(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

// Full argv-level entry point: parses flags, loads the configuration,
// applies overrides, dispatches, and maps failures to exit codes
// (0 ok, 2 configuration, 3 missing artifact, 4 numeric).
int run_cli(int argc, const char* const* argv);

}  // namespace ec2lab::cli
