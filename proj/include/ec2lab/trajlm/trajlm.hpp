#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ec2lab/game/game.hpp"
#include "ec2lab/models/model.hpp"
#include "ec2lab/tok/bpe.hpp"
#include "ec2lab/world/world.hpp"

namespace ec2lab::trajlm {

struct CropSpec {
  size_t start = 0;
  size_t length = 0;
};

enum class PromptKind { None, Ec, Nl };

// Completion conditioning. Ec carries a {T, V} stack of row distributions
// (one-hot rows for corpus messages, straight-through samples when a live
// speaker is in the loop) so the embedder never consumes bare token ids.
struct Prompt {
  PromptKind kind = PromptKind::None;
  num::Var ec_soft;
  std::vector<int> nl_ids;

  static Prompt none() { return {}; }
  static Prompt ec(num::Var soft) {
    Prompt p;
    p.kind = PromptKind::Ec;
    p.ec_soft = soft;
    return p;
  }
  static Prompt nl(std::vector<int> ids) {
    Prompt p;
    p.kind = PromptKind::Nl;
    p.nl_ids = std::move(ids);
    return p;
  }
};

// Frame-wise latent encoding, {L, 8} -> {L, d_lat}. Needs L >= 4 so a crop
// has room on both sides.
num::Var encode_trajectory(models::PipelineModel& m, num::Tape& t,
                           const num::Array& frames);
num::Array encode_trajectory_plain(const models::PipelineModel& m,
                                   const num::Array& frames);

// Crop length is uniform in [ceil(0.1 L), floor(0.5 L)], start uniform over
// the valid range.
CropSpec draw_crop(size_t length, num::Rng& rng);

struct Crop {
  num::Var rem;  // {L - length, d_lat}, original row order with the hole cut
  num::Var seg;  // {length, d_lat}
  CropSpec spec;
};
Crop apply_crop(num::Tape& t, num::Var whole, const CropSpec& spec);
Crop crop_segment(num::Tape& t, num::Var whole, num::Rng& rng);

// Masked completion: [prompt] ++ [remaining frames at their original
// positions] ++ [mask queries carrying the cropped positions], causal
// forward, read-out at the mask positions. Returns {crop.length, d_lat}.
num::Var complete(models::PipelineModel& m, num::Tape& t, const Prompt& prompt,
                  num::Var rem, const CropSpec& crop);

// One pre-training example: observed frames plus both prompt encodings and
// the crop they share.
struct PretrainBatchItem {
  num::Array frames;           // {L, 8}
  std::vector<int> ec_tokens;  // emergent message, length msg_len
  std::vector<int> nl_ids;     // BPE-encoded instruction
  CropSpec crop;
};

// Mean squared completion error per prompt stream, each from its own forward
// pass over the batch: (L_ec, L_nl). Targets are the detached segment
// latents, so the encoder trains through the visible frames only.
std::pair<num::Var, num::Var> pretrain_losses(
    models::PipelineModel& m, num::Tape& t,
    const std::vector<PretrainBatchItem>& batch);

struct PretrainConfig {
  size_t steps = 2000;
  size_t batch = 32;
  double lr = 3e-4;
  double lambda_game = 0.1;  // speaking-game weight while sharing the trunk
  bool use_ec = true;
  bool use_nl = true;
  double holdout_frac = 0.1;
  size_t eval_every = 100;       // held-out cadence, also the log cadence
  size_t eval_items = 32;        // held-out sample size per evaluation
  // Early stop once held-out L_ec falls to this fraction of its value at
  // initialization; 0 disables.
  double stop_heldout_ratio = 0.0;
  game::GameConfig game;         // inner game term settings (when shared)

  void validate() const;  // use_ec or use_nl must remain enabled
};

struct PretrainLogRow {
  size_t step;
  double l_ec, l_nl, l_game;
  double heldout_ec, heldout_nl;  // last evaluated values; 0 before the first
};

struct PretrainResult {
  std::vector<PretrainLogRow> log;
  size_t steps_run = 0;
  bool diverged = false;
  std::string failure;
  // First and last held-out evaluations, for the improvement criteria.
  double heldout_ec_first = 0.0, heldout_ec_last = 0.0;
  double heldout_nl_first = 0.0, heldout_nl_last = 0.0;
};

// Joint pre-training: total = L_ec + L_nl + lambda_game * L_game (game term
// only while the speaker shares the trunk). Adam over encoder, LM, adapters
// and, when shared, the game nets. Deterministic given seed; the last tenth
// of the dataset (by index) is held out from the update stream.
PretrainResult pretrain(models::PipelineModel& m, const PretrainConfig& cfg,
                        const std::vector<world::Episode>& dataset,
                        const std::vector<std::vector<int>>& ec_corpus,
                        const tok::BpeVocab& vocab, uint64_t seed);

// {T, V} one-hot rows for a stored emergent message.
num::Array message_onehot(const std::vector<int>& tokens, size_t vocab);

// BPE-encode an instruction and clip it to the prompt budget.
std::vector<int> encode_prompt_ids(const models::ModelConfig& cfg,
                                   const tok::BpeVocab& vocab,
                                   const std::string& instruction);

void write_pretrain_log_csv(const PretrainResult& res, const std::string& path);

}  // namespace ec2lab::trajlm
