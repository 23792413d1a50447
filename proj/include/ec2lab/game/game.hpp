#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ec2lab/models/model.hpp"
#include "ec2lab/world/world.hpp"

namespace ec2lab::game {

struct GameConfig {
  size_t K = 7;                 // confounders per trial
  double tau = 1.0;             // Gumbel temperature
  size_t n_irrelevant = 3;      // candidate mix; must sum to K
  size_t n_reversed = 2;
  size_t n_shuffled = 2;
  size_t batch = 8;
  size_t steps = 20000;
  double lr = 1e-3;
  size_t eval_every = 500;      // accuracy window and early-stop cadence
  double stop_accuracy = 0.0;   // 0 disables early stopping
  double stop_reversed_accuracy = 0.0;

  void validate() const;
};

enum class CandTag { Target, Irrelevant, Reversed, Shuffled };

struct CandidateSet {
  std::vector<num::Array> features;  // K+1 pooled video features
  std::vector<CandTag> tags;
  size_t target_slot = 0;
};

// One spoken message. soft is the {T, V} stack of straight-through samples:
// forward values are the hard one-hots, backward values the soft
// distributions, so consumers stay differentiable w.r.t. the speaker.
struct Message {
  std::vector<int> tokens;
  num::Var soft;
};

// Autoregressive generation: the pooled feature occupies position 0 and each
// sampled token is fed back through the shared token embedding.
Message speak(models::PipelineModel& m, num::Tape& t, const num::Array& feature,
              double tau, num::Rng& rng);

// Greedy argmax decoding on the plain-array path; used for corpus export.
std::vector<int> speak_greedy(const models::PipelineModel& m,
                              const num::Array& feature);

// Confounder construction. Irrelevant candidates prefer episodes of a
// different task; reversed and shuffled candidates re-pool the target's frame
// features after reordering, falling back to a shuffle or an irrelevant
// episode when the reordering leaves the pooled feature unchanged
// (constant trajectories).
CandidateSet build_candidates(const std::vector<world::Episode>& dataset,
                              size_t target_index, const GameConfig& cfg,
                              num::Rng& rng);

struct ScoreResult {
  num::Var scores;          // {1, K+1}, inverse squared distances
  num::Array selection;     // softmax over the score row
};

// GRU rollout over the message (or the listener trunk when configured), then
// score_j = 1 / max(1e-8, ||h - proj(I_j)||^2).
ScoreResult listen_score(models::PipelineModel& m, num::Tape& t,
                         const Message& msg, const CandidateSet& cands);

// One batched game pass: speak for every target, score every candidate set,
// mean selection cross-entropy. Metrics come from the same forward values.
struct GameBatch {
  num::Var loss;                     // scalar
  std::vector<size_t> chosen;        // argmax slot per item
  std::vector<const CandidateSet*> cands;
  double accuracy() const;           // chosen == target
  double reversed_rank_accuracy() const;  // target outscored every reversed copy
  std::vector<double> target_scores; // bookkeeping for the audits
  std::vector<std::vector<double>> slot_scores;
};
GameBatch game_step(models::PipelineModel& m, num::Tape& t,
                    const std::vector<const world::Episode*>& targets,
                    const std::vector<const CandidateSet*>& cands,
                    const GameConfig& cfg, num::Rng& rng);

// Convenience wrapper matching the batched contract above for callers that
// only need the scalar.
num::Var game_loss(models::PipelineModel& m, num::Tape& t,
                   const std::vector<const world::Episode*>& targets,
                   const std::vector<const CandidateSet*>& cands,
                   const GameConfig& cfg, num::Rng& rng);

struct GameLogRow {
  size_t step;
  double loss;
  double accuracy;           // batch
  double reversed_accuracy;  // batch
};

struct TrainGameResult {
  std::vector<GameLogRow> log;
  size_t steps_run = 0;
  bool diverged = false;
  std::string failure;                    // what went wrong, with step and seed
  double window_accuracy = 0.0;           // over the last eval window
  double window_reversed_accuracy = 0.0;
};

// Adam on speaker + listener (+ shared trunk). Deterministic given seed.
// On numeric failure restores the last end-of-window parameter snapshot and
// returns with diverged = true.
TrainGameResult train_game(models::PipelineModel& m, const GameConfig& cfg,
                           const std::vector<world::Episode>& dataset,
                           uint64_t seed);

// Greedy messages for the whole dataset, one per episode, in order.
std::vector<std::vector<int>> emit_emergent_corpus(
    const models::PipelineModel& m, const std::vector<world::Episode>& dataset);

// JSON-lines {"episode_index": i, "tokens": [...]}.
void write_emergent_jsonl(const std::vector<std::vector<int>>& messages,
                          const std::string& path);
std::vector<std::vector<int>> read_emergent_jsonl(const std::string& path);

}  // namespace ec2lab::game
