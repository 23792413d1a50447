#include "ec2lab/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "ec2lab/game/game.hpp"
#include "ec2lab/trajlm/trajlm.hpp"
#include "ec2lab/util/fsio.hpp"
#include "json.hpp"

namespace ec2lab::policy {

using num::Array;
using num::Tape;
using num::Var;

ContextWindow make_window(const std::vector<world::WorldState>& states,
                          size_t t) {
  if (states.empty() || t >= states.size())
    throw std::invalid_argument("make_window: index " + std::to_string(t) +
                                " outside history of " +
                                std::to_string(states.size()));
  ContextWindow w;
  w.t = t;
  w.states = Array::zeros({kWindow, world::kStateDim});
  for (size_t i = 0; i < kWindow; ++i) {
    size_t src = t + 1 + i >= kWindow ? t + 1 + i - kWindow : 0;
    auto v = states[src].vec();
    for (size_t c = 0; c < world::kStateDim; ++c) w.states.at(i, c) = v[c];
  }
  return w;
}

std::string prompt_mode_name(PromptMode mode) {
  return mode == PromptMode::Nl ? "nl" : "ec";
}

num::Array prompt_rows_nl(const models::PipelineModel& m,
                          const std::vector<int>& nl_ids) {
  if (nl_ids.empty())
    throw std::invalid_argument("prompt_rows_nl: empty prompt");
  std::vector<int> ids = nl_ids;
  if (ids.size() > m.cfg.max_prompt) ids.resize(m.cfg.max_prompt);
  size_t P = ids.size(), d = m.cfg.d_model();
  Array rows = Array::zeros({P, d});
  for (size_t r = 0; r < P; ++r) {
    if (ids[r] < 0 || static_cast<size_t>(ids[r]) >= m.cfg.nl_vocab)
      throw std::invalid_argument("prompt_rows_nl: token " +
                                  std::to_string(ids[r]) + " out of range");
    for (size_t c = 0; c < d; ++c)
      rows.at(r, c) = m.nl_tok->value.at(static_cast<size_t>(ids[r]), c) +
                      m.prompt_pos->value.at(r, c);
  }
  return rows;
}

num::Array prompt_rows_ec(const models::PipelineModel& m,
                          const std::vector<int>& ec_tokens) {
  if (ec_tokens.empty())
    throw std::invalid_argument("prompt_rows_ec: empty message");
  if (ec_tokens.size() > m.cfg.max_prompt)
    throw std::invalid_argument("prompt_rows_ec: message of " +
                                std::to_string(ec_tokens.size()) +
                                " tokens exceeds prompt budget " +
                                std::to_string(m.cfg.max_prompt));
  Array onehot = trajlm::message_onehot(ec_tokens, m.cfg.ec_vocab);
  Array rows = m.pe_adapter.apply_plain(
      num::k_gelu(m.pe_fc.apply_plain(onehot)));
  return num::k_add(rows,
                    num::k_slice_rows(m.prompt_pos->value, 0, rows.rows()));
}

PolicyFeaturizer make_featurizer(const models::PipelineModel& m,
                                 const num::Array& prompt_rows) {
  if (prompt_rows.rows() == 0 || prompt_rows.cols() != m.cfg.d_model())
    throw std::invalid_argument("make_featurizer: prompt rows " +
                                prompt_rows.shape_str() + ", expected {P, " +
                                std::to_string(m.cfg.d_model()) + "}");
  if (prompt_rows.rows() > m.cfg.max_prompt)
    throw std::invalid_argument("make_featurizer: prompt longer than budget");
  PolicyFeaturizer f;
  f.model = &m;
  f.prompt_rows = prompt_rows;
  for (size_t r = 0; r < prompt_rows.rows(); ++r)
    m.lm.step_plain(num::k_slice_rows(prompt_rows, r, 1), f.prompt_kv);
  return f;
}

num::Array embed_context(const PolicyFeaturizer& f, const ContextWindow& w) {
  if (!f.model) throw std::invalid_argument("embed_context: empty featurizer");
  const models::PipelineModel& m = *f.model;
  if (w.states.rows() != kWindow || w.states.cols() != m.cfg.state_dim)
    throw std::invalid_argument("embed_context: window " +
                                w.states.shape_str());
  Array lat = m.frame_proj.apply_plain(m.encoder.apply_plain(w.states));
  // Window positions track the episode clock but stay inside the table;
  // start-of-episode padding shares the early rows like the repeated frames.
  size_t p0 = w.t + 1 >= kWindow ? w.t + 1 - kWindow : 0;
  p0 = std::min(p0, m.cfg.max_frames - kWindow);
  Array x = num::k_add(lat, num::k_slice_rows(m.frame_pos->value, p0, kWindow));
  auto kv = f.prompt_kv;  // per-call copy keeps the featurizer reusable
  Array out;
  for (size_t r = 0; r < kWindow; ++r)
    out = m.lm.step_plain(num::k_slice_rows(x, r, 1), kv);
  return out;
}

num::Array embed_context(const models::PipelineModel& m,
                         const num::Array& prompt_rows,
                         const ContextWindow& w) {
  return embed_context(make_featurizer(m, prompt_rows), w);
}

size_t policy_feature_dim(const models::PipelineModel& m) {
  return m.cfg.d_model() + world::kStateDim;
}

num::Array policy_feature(const PolicyFeaturizer& f, const ContextWindow& w) {
  Array z = embed_context(f, w);
  size_t d = z.cols();
  Array feat = Array::zeros({1, d + world::kStateDim});
  for (size_t c = 0; c < d; ++c) feat.at(0, c) = z.at(0, c);
  for (size_t c = 0; c < world::kStateDim; ++c)
    feat.at(0, d + c) = w.states.at(kWindow - 1, c);
  return feat;
}

PolicyHead::PolicyHead(size_t feat_dim, uint64_t seed, double sigma_)
    : sigma(sigma_) {
  if (feat_dim == 0 || !(sigma > 0))
    throw std::invalid_argument("PolicyHead: bad feature dim or sigma");
  num::Rng rng(seed);
  num::Rng r_head = rng.split("policy_head");
  mlp = num::Mlp(params, "head", feat_dim, {256, 256}, world::kActionDim,
                 num::Act::GELU, true, r_head);
}

world::Action PolicyHead::act(const num::Array& feature) const {
  Array mu = mlp.apply_plain(feature);
  return world::Action(mu.at(0, 0), mu.at(0, 1), mu.at(0, 2));
}

num::Var gaussian_nll(Tape& t, Var mean_pred, const Array& actions,
                      double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_nll: sigma <= 0");
  if (mean_pred.val().rows() != actions.rows() ||
      mean_pred.val().cols() != actions.cols() || actions.rows() == 0)
    throw std::invalid_argument("gaussian_nll: mean " +
                                mean_pred.val().shape_str() + " vs actions " +
                                actions.shape_str());
  double B = static_cast<double>(actions.rows());
  double D = static_cast<double>(actions.cols());
  Var quad = num::scale(
      num::sum_all(num::square(num::sub(mean_pred, t.constant(actions)))),
      1.0 / (2.0 * sigma * sigma * B));
  double log_norm = 0.5 * D * std::log(2.0 * M_PI * sigma * sigma);
  return num::add(quad, t.constant(Array::full({1}, log_norm)));
}

num::Var bc_loss(Tape& t, const PolicyHead& head, const Array& features,
                 const Array& actions, bool training) {
  if (features.rows() < 2)
    throw std::invalid_argument("bc_loss: batch of " +
                                std::to_string(features.rows()) +
                                " rows, need >= 2 for batch norm");
  if (features.cols() != head.mlp.layers.front().in_dim())
    throw std::invalid_argument("bc_loss: feature width " +
                                features.shape_str());
  Var mu = head.mlp.apply(t, t.constant(features), training);
  return gaussian_nll(t, mu, actions, head.sigma);
}

const world::TaskSpec& DemoSet::task() const {
  if (demos.empty()) throw std::invalid_argument("DemoSet: empty");
  return demos.front().task;
}

void DemoSet::validate() const {
  if (demos.empty()) throw std::invalid_argument("DemoSet: empty");
  const std::string id = demos.front().task.id();
  for (const world::Episode& d : demos) {
    if (d.task.id() != id)
      throw std::invalid_argument("DemoSet: mixed tasks " + id + " and " +
                                  d.task.id());
    if (d.states.size() < 2 || d.actions.size() != d.states.size() - 1)
      throw std::invalid_argument("DemoSet: demo without actions");
  }
}

RolloutResult rollout_policy(const ActionFn& fn, const world::TaskSpec& task,
                             size_t episodes, size_t max_steps,
                             num::Rng& rng) {
  if (episodes == 0 || max_steps == 0)
    throw std::invalid_argument("rollout_policy: zero episodes or steps");
  RolloutResult res;
  size_t won = 0;
  for (size_t e = 0; e < episodes; ++e) {
    num::Rng ep_rng = rng.split(e);
    world::TaskSpec t = task;
    std::vector<world::WorldState> history{world::reset_state(t, ep_rng)};
    bool ok = world::goal_success(history.back(), t);
    for (size_t s = 0; s < max_steps && !ok; ++s) {
      history.push_back(world::step(history.back(), fn(history)));
      ok = world::goal_success(history.back(), t);
    }
    res.successes.push_back(ok ? 1 : 0);
    won += ok ? 1 : 0;
  }
  res.rate = static_cast<double>(won) / static_cast<double>(episodes);
  return res;
}

double evaluate(const PolicyHead& head, const PolicyFeaturizer& f,
                const world::TaskSpec& task, size_t episodes, size_t max_steps,
                num::Rng& rng) {
  ActionFn fn = [&](const std::vector<world::WorldState>& history) {
    ContextWindow w = make_window(history, history.size() - 1);
    return head.act(policy_feature(f, w));
  };
  return rollout_policy(fn, task, episodes, max_steps, rng).rate;
}

void PolicyConfig::validate() const {
  if (steps == 0) throw std::invalid_argument("PolicyConfig: steps == 0");
  if (batch < 2) throw std::invalid_argument("PolicyConfig: batch < 2");
  if (!(lr > 0)) throw std::invalid_argument("PolicyConfig: lr <= 0");
  if (eval_every == 0 || eval_rollouts == 0 || max_episode_steps == 0)
    throw std::invalid_argument("PolicyConfig: zero evaluation setting");
}

TrainPolicyResult train_policy(const models::PipelineModel& m,
                               const tok::BpeVocab& vocab, PolicyHead& head,
                               const DemoSet& demos, PromptMode mode,
                               const PolicyConfig& cfg, uint64_t seed) {
  cfg.validate();
  demos.validate();
  if (head.mlp.layers.front().in_dim() != policy_feature_dim(m))
    throw std::invalid_argument("train_policy: head expects " +
                                std::to_string(head.mlp.layers.front().in_dim()) +
                                " features, model provides " +
                                std::to_string(policy_feature_dim(m)));

  Array prows;
  if (mode == PromptMode::Nl) {
    std::vector<int> ids = tok::encode(vocab, demos.demos.front().instruction);
    prows = prompt_rows_nl(m, ids);
  } else {
    std::vector<int> msg = game::speak_greedy(m, demos.demos.front().video_feature);
    prows = prompt_rows_ec(m, msg);
  }
  PolicyFeaturizer f = make_featurizer(m, prows);

  // The featurizer is frozen and the demos fixed, so every training input
  // can be computed once up front; the loop then only touches the head.
  size_t M = 0;
  for (const world::Episode& d : demos.demos) M += d.actions.size();
  size_t fd = policy_feature_dim(m);
  Array feats = Array::zeros({M, fd});
  Array targets = Array::zeros({M, world::kActionDim});
  size_t row = 0;
  for (const world::Episode& d : demos.demos)
    for (size_t t = 0; t < d.actions.size(); ++t) {
      Array fr = policy_feature(f, make_window(d.states, t));
      for (size_t c = 0; c < fd; ++c) feats.at(row, c) = fr.at(0, c);
      auto av = d.actions[t].vec();
      for (size_t c = 0; c < world::kActionDim; ++c)
        targets.at(row, c) = av[c];
      ++row;
    }

  num::Rng root(seed);
  num::Rng r_step = root.split("policy_train");
  num::Rng r_eval = root.split("policy_eval");
  num::AdamState adam;
  num::AdamConfig acfg;
  acfg.lr = cfg.lr;
  std::vector<num::Parameter*> params = head.trainable();

  auto snapshot_of = [&]() {
    std::vector<std::pair<std::string, std::vector<double>>> snap;
    for (num::Parameter* p : head.params.all())
      snap.emplace_back(p->name, p->value.data);
    return snap;
  };
  auto restore = [&](const std::vector<std::pair<std::string,
                                                 std::vector<double>>>& snap) {
    for (const auto& [name, data] : snap)
      head.params.get(name)->value.data = data;
  };
  auto snap = snapshot_of();

  TrainPolicyResult res;
  auto run_eval = [&](size_t step, size_t index) {
    num::Rng er = r_eval.split(index);
    double rate = evaluate(head, f, demos.task(), cfg.eval_rollouts,
                           cfg.max_episode_steps, er);
    res.evals.push_back({step, rate});
    if (res.evals.size() == 1 || rate > res.best_rate) {
      res.best_rate = rate;
      res.best_step = step;
    }
  };

  for (size_t step = 0; step < cfg.steps; ++step) {
    num::Rng r = r_step.split(step);
    try {
      Array bf = Array::zeros({cfg.batch, fd});
      Array ba = Array::zeros({cfg.batch, world::kActionDim});
      for (size_t i = 0; i < cfg.batch; ++i) {
        size_t idx = static_cast<size_t>(r.uniform_int(static_cast<int>(M)));
        for (size_t c = 0; c < fd; ++c) bf.at(i, c) = feats.at(idx, c);
        for (size_t c = 0; c < world::kActionDim; ++c)
          ba.at(i, c) = targets.at(idx, c);
      }
      head.params.zero_grad();
      Tape t;
      Var loss = bc_loss(t, head, bf, ba, true);
      t.backward(loss);
      num::adam_step(params, adam, acfg);
      if (step == 0) res.loss_first = loss.val().data[0];
      res.loss_last = loss.val().data[0];
    } catch (const num::NumericError& e) {
      restore(snap);
      res.diverged = true;
      res.failure = std::string(e.what()) + " (train_policy step " +
                    std::to_string(step) + ", seed " + std::to_string(seed) +
                    ")";
      break;
    }
    res.steps_run = step + 1;
    if ((step + 1) % cfg.eval_every == 0) {
      run_eval(step + 1, (step + 1) / cfg.eval_every);
      snap = snapshot_of();
    }
  }
  if (!res.diverged && cfg.steps % cfg.eval_every != 0)
    run_eval(cfg.steps, cfg.steps / cfg.eval_every + 1);
  return res;
}

void write_eval_report_csv(const EvalReport& report, const std::string& path) {
  std::string out =
      "task,seed,demo_size,prompt_mode,variant,best_rate,best_step\n";
  char buf[256];
  for (const EvalRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%zu,%s,%s,%.10g,%zu\n",
                  r.task.c_str(), static_cast<unsigned long long>(r.seed),
                  r.demo_size, r.prompt_mode.c_str(), r.variant.c_str(),
                  r.best_rate, r.best_step);
    out += buf;
  }
  util::atomic_write(path, out);
}

void write_eval_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const EvalRow& r : report.rows) {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["seed"] = r.seed;
    j["demo_size"] = r.demo_size;
    j["prompt_mode"] = r.prompt_mode;
    j["variant"] = r.variant;
    j["best_rate"] = r.best_rate;
    j["best_step"] = r.best_step;
    j["rates"] = r.rates;
    rows.push_back(std::move(j));
  }
  util::atomic_write(path, rows.dump(2) + "\n");
}

EvalReport read_eval_report_json(const std::string& path) {
  nlohmann::json rows;
  try {
    rows = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("eval report " + path + ": " + e.what());
  }
  if (!rows.is_array())
    throw std::runtime_error("eval report " + path + ": expected an array");
  EvalReport rep;
  for (const auto& j : rows) {
    EvalRow r;
    r.task = j.at("task").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.demo_size = j.at("demo_size").get<size_t>();
    r.prompt_mode = j.at("prompt_mode").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.best_rate = j.at("best_rate").get<double>();
    r.best_step = j.at("best_step").get<size_t>();
    r.rates = j.at("rates").get<std::vector<double>>();
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

}  // namespace ec2lab::policy
