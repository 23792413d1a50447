#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ec2lab/models/model.hpp"
#include "ec2lab/tok/bpe.hpp"
#include "ec2lab/world/world.hpp"

namespace ec2lab::policy {

// Behavior cloning on top of the frozen trajectory LM: a prompt plus a short
// window of recent states is featurized by the trunk, the feature (with the
// raw current state appended) feeds a batch-norm MLP head, and the head is
// trained by Gaussian log-likelihood on expert actions.

inline constexpr size_t kWindow = 4;

// Last kWindow states, oldest first, padded by repeating the first state at
// episode start. t is the index of the newest state within its episode.
struct ContextWindow {
  num::Array states;  // {kWindow, state_dim}
  size_t t = 0;
};

ContextWindow make_window(const std::vector<world::WorldState>& states,
                          size_t t);

enum class PromptMode { Nl, Ec };

std::string prompt_mode_name(PromptMode mode);

// Prompt blocks ready for the trunk, {P, d_model}. Natural-language prompts
// look up token embeddings; emergent prompts run one-hot messages through the
// prompt encoder. Both add the prompt position table. The two modes differ
// only here; everything downstream is shared.
num::Array prompt_rows_nl(const models::PipelineModel& m,
                          const std::vector<int>& nl_ids);
num::Array prompt_rows_ec(const models::PipelineModel& m,
                          const std::vector<int>& ec_tokens);

// The prompt's trunk K/V state is computed once; each embed_context call then
// pays only for the window positions.
struct PolicyFeaturizer {
  const models::PipelineModel* model = nullptr;
  num::Array prompt_rows;
  num::TransformerStack::KvCacheArr prompt_kv;
};

PolicyFeaturizer make_featurizer(const models::PipelineModel& m,
                                 const num::Array& prompt_rows);

// Trunk output row at the final window position, {1, d_model}. Inference
// path only; no gradients touch the language model or the encoder.
num::Array embed_context(const PolicyFeaturizer& f, const ContextWindow& w);
num::Array embed_context(const models::PipelineModel& m,
                         const num::Array& prompt_rows,
                         const ContextWindow& w);

size_t policy_feature_dim(const models::PipelineModel& m);

// Head input row: featurizer output with the raw current state appended.
num::Array policy_feature(const PolicyFeaturizer& f, const ContextWindow& w);

// Batch-norm MLP head over policy features; the action distribution is a
// diagonal Gaussian with fixed sigma around the head output.
struct PolicyHead {
  num::ParamStore params;
  num::Mlp mlp;
  double sigma = 0.1;

  PolicyHead(size_t feat_dim, uint64_t seed, double sigma = 0.1);
  std::vector<num::Parameter*> trainable() const { return mlp.trainable(); }
  world::Action act(const num::Array& feature) const;  // greedy = mean
};

// Mean over rows of the negative Gaussian log-density of actions around
// mean_pred, sigma fixed across dimensions.
num::Var gaussian_nll(num::Tape& t, num::Var mean_pred,
                      const num::Array& actions, double sigma);

// Full behavior-cloning loss for a feature/action batch. training=true uses
// batch statistics (needs >= 2 rows), training=false the running ones.
num::Var bc_loss(num::Tape& t, const PolicyHead& head,
                 const num::Array& features, const num::Array& actions,
                 bool training);

// n expert demonstrations of one task.
struct DemoSet {
  std::vector<world::Episode> demos;
  size_t n() const { return demos.size(); }
  const world::TaskSpec& task() const;
  void validate() const;  // non-empty, single task, >= 1 action each
};

// Rollouts: fn maps the state history (newest last) to an action. Each
// episode draws its own RNG stream split by episode index, so outcomes do
// not depend on evaluation order.
using ActionFn =
    std::function<world::Action(const std::vector<world::WorldState>&)>;

struct RolloutResult {
  std::vector<int> successes;  // 0/1 per episode
  double rate = 0.0;
};

RolloutResult rollout_policy(const ActionFn& fn, const world::TaskSpec& task,
                             size_t episodes, size_t max_steps, num::Rng& rng);

double evaluate(const PolicyHead& head, const PolicyFeaturizer& f,
                const world::TaskSpec& task, size_t episodes, size_t max_steps,
                num::Rng& rng);

struct PolicyConfig {
  size_t steps = 20000;
  size_t batch = 32;
  double lr = 1e-3;
  size_t eval_every = 1000;
  size_t eval_rollouts = 50;
  size_t max_episode_steps = 64;
  void validate() const;
};

struct EvalPoint {
  size_t step = 0;
  double rate = 0.0;
};

struct TrainPolicyResult {
  std::vector<EvalPoint> evals;
  double best_rate = 0.0;
  size_t best_step = 0;  // earliest step achieving best_rate
  double loss_first = 0.0;
  double loss_last = 0.0;
  size_t steps_run = 0;
  bool diverged = false;
  std::string failure;
};

// Trains the head in place; the model is strictly read-only (frozen
// featurizer). The prompt comes from the first demonstration: its
// instruction for Nl, its video feature spoken greedily for Ec. Evaluations
// run every eval_every steps plus once at the end when steps is not a
// multiple; best_rate is their maximum.
TrainPolicyResult train_policy(const models::PipelineModel& m,
                               const tok::BpeVocab& vocab, PolicyHead& head,
                               const DemoSet& demos, PromptMode mode,
                               const PolicyConfig& cfg, uint64_t seed);

struct EvalRow {
  std::string task;
  uint64_t seed = 0;
  size_t demo_size = 0;
  std::string prompt_mode;
  std::string variant;
  double best_rate = 0.0;
  size_t best_step = 0;
  std::vector<double> rates;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

void write_eval_report_csv(const EvalReport& report, const std::string& path);
void write_eval_report_json(const EvalReport& report, const std::string& path);
EvalReport read_eval_report_json(const std::string& path);

}  // namespace ec2lab::policy
