#include "ec2lab/game/game.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ec2lab/util/fsio.hpp"
#include "json.hpp"

namespace ec2lab::game {

using num::Array;
using num::Tape;
using num::Var;

void GameConfig::validate() const {
  if (K < 1) throw std::invalid_argument("GameConfig: K must be >= 1");
  if (n_irrelevant + n_reversed + n_shuffled != K)
    throw std::invalid_argument("GameConfig: candidate mix must sum to K");
  if (tau <= 0.0) throw std::invalid_argument("GameConfig: tau must be > 0");
  if (batch < 1) throw std::invalid_argument("GameConfig: batch must be >= 1");
  if (eval_every < 1)
    throw std::invalid_argument("GameConfig: eval_every must be >= 1");
}

namespace {

struct SpokenBatch {
  std::vector<std::vector<int>> tokens;  // [B][T]
  std::vector<Var> soft_steps;           // T entries of {B, V}
};

SpokenBatch speak_batch(models::PipelineModel& m, Tape& t,
                        const std::vector<const Array*>& features, double tau,
                        num::Rng& rng) {
  size_t B = features.size();
  size_t T = m.cfg.msg_len;
  size_t vd = m.cfg.video_dim;
  Array feat = Array::zeros({B, vd});
  for (size_t i = 0; i < B; ++i) {
    if (features[i]->numel() != vd)
      throw std::invalid_argument("speak: feature width " +
                                  features[i]->shape_str() + ", expected " +
                                  std::to_string(vd));
    for (size_t c = 0; c < vd; ++c) feat.at(i, c) = features[i]->data[c];
  }
  Var pos = t.leaf(m.spk_pos);
  Var x = num::add_rowvec(m.spk_in.apply(t, t.constant(std::move(feat))),
                          num::slice_rows(pos, 0, 1));
  auto& trunk = m.speaker_trunk();
  num::TransformerStack::KvBatch cache;
  SpokenBatch out;
  out.tokens.assign(B, {});
  for (size_t s = 0; s < T; ++s) {
    Var h = trunk.step_batch(t, x, cache);
    Var logits = m.spk_head.apply(t, h);
    Var soft;
    for (size_t i = 0; i < B; ++i) {
      Var st = num::gumbel_softmax_sample(num::slice_rows(logits, i, 1), tau,
                                          rng, true);
      out.tokens[i].push_back(static_cast<int>(num::k_argmax(st.val())));
      soft = soft.valid() ? num::concat_rows(soft, st) : st;
    }
    out.soft_steps.push_back(soft);
    if (s + 1 < T)
      x = num::add_rowvec(num::matmul(soft, t.leaf(m.spk_tok)),
                          num::slice_rows(pos, s + 1, 1));
  }
  return out;
}

// Scores {B, K+1} for a batch of messages against their candidate sets.
Var listen_core(models::PipelineModel& m, Tape& t,
                const std::vector<Var>& soft_steps,
                const std::vector<const CandidateSet*>& cands) {
  size_t B = cands.size();
  size_t dl = m.cfg.d_lsn;
  size_t kp1 = cands[0]->features.size();
  Var hl = t.constant(Array::zeros({B, dl}));
  if (m.cfg.listener_kind == "gru") {
    for (const Var& soft : soft_steps)
      hl = m.lsn_gru.step(t, num::matmul(soft, t.leaf(m.lsn_tok)), hl);
  } else {
    num::TransformerStack::KvBatch cache;
    Var pos = t.leaf(m.lsn_pos);
    for (size_t s = 0; s < soft_steps.size(); ++s) {
      Var emb = num::add_rowvec(num::matmul(soft_steps[s], t.leaf(m.lsn_tok)),
                                num::slice_rows(pos, s, 1));
      hl = m.lsn_trunk->step_batch(t, emb, cache);
    }
  }
  size_t vd = m.cfg.video_dim;
  Array cf = Array::zeros({B * kp1, vd});
  for (size_t i = 0; i < B; ++i) {
    if (cands[i]->features.size() != kp1 || cands[i]->tags.size() != kp1)
      throw std::invalid_argument("listen: ragged candidate set");
    for (size_t j = 0; j < kp1; ++j)
      for (size_t c = 0; c < vd; ++c)
        cf.at(i * kp1 + j, c) = cands[i]->features[j].data[c];
  }
  Var proj = m.lsn_proj.apply(t, t.constant(std::move(cf)), false);
  Array sel = Array::zeros({B * kp1, B});
  for (size_t i = 0; i < B; ++i)
    for (size_t j = 0; j < kp1; ++j) sel.at(i * kp1 + j, i) = 1.0;
  Var hlrep = num::matmul(t.constant(std::move(sel)), hl);
  Var d2 = num::matmul(num::square(num::sub(proj, hlrep)),
                       t.constant(Array::full({dl, 1}, 1.0)));
  return num::reshape(num::inv_clamped(d2, 1e-8), {B, kp1});
}

Array reverse_rows(const Array& a) {
  Array out = Array::zeros(a.shape);
  size_t L = a.rows(), c = a.cols();
  for (size_t r = 0; r < L; ++r)
    for (size_t j = 0; j < c; ++j) out.at(L - 1 - r, j) = a.at(r, j);
  return out;
}

Array shuffle_rows(const Array& a, num::Rng& rng) {
  size_t L = a.rows(), c = a.cols();
  std::vector<size_t> perm(L);
  for (size_t i = 0; i < L; ++i) perm[i] = i;
  for (size_t i = L; i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<size_t>(
                  rng.uniform_int(static_cast<int>(i)))]);
  Array out = Array::zeros(a.shape);
  for (size_t r = 0; r < L; ++r)
    for (size_t j = 0; j < c; ++j) out.at(r, j) = a.at(perm[r], j);
  return out;
}

bool pooled_differs(const Array& a, const Array& b) {
  for (size_t i = 0; i < a.numel(); ++i)
    if (std::abs(a.data[i] - b.data[i]) > 1e-12) return true;
  return false;
}

size_t draw_irrelevant(const std::vector<world::Episode>& dataset,
                       size_t target_index, std::set<size_t>& used,
                       num::Rng& rng) {
  size_t n = dataset.size();
  const std::string target_task = dataset[target_index].task.id();
  for (int tries = 0; tries < 64; ++tries) {
    size_t idx = static_cast<size_t>(rng.uniform_int(static_cast<int>(n)));
    if (idx == target_index || used.count(idx)) continue;
    if (tries < 32 && dataset[idx].task.id() == target_task) continue;
    used.insert(idx);
    return idx;
  }
  for (size_t idx = 0; idx < n; ++idx)
    if (idx != target_index && !used.count(idx)) {
      used.insert(idx);
      return idx;
    }
  throw std::invalid_argument("build_candidates: dataset exhausted");
}

}  // namespace

Message speak(models::PipelineModel& m, Tape& t, const Array& feature,
              double tau, num::Rng& rng) {
  SpokenBatch sp = speak_batch(m, t, {&feature}, tau, rng);
  Message msg;
  msg.tokens = sp.tokens[0];
  for (const Var& row : sp.soft_steps)
    msg.soft = msg.soft.valid() ? num::concat_rows(msg.soft, row) : row;
  return msg;
}

std::vector<int> speak_greedy(const models::PipelineModel& m,
                              const Array& feature) {
  size_t T = m.cfg.msg_len;
  Array x = num::k_add(m.spk_in.apply_plain(feature),
                       num::k_slice_rows(m.spk_pos->value, 0, 1));
  const auto& trunk = m.speaker_trunk();
  num::TransformerStack::KvCacheArr cache;
  std::vector<int> tokens;
  for (size_t s = 0; s < T; ++s) {
    Array h = trunk.step_plain(x, cache);
    Array logits = m.spk_head.apply_plain(h);
    size_t tok = num::k_argmax(logits);
    tokens.push_back(static_cast<int>(tok));
    if (s + 1 < T)
      x = num::k_add(num::k_slice_rows(m.spk_tok->value, tok, 1),
                     num::k_slice_rows(m.spk_pos->value, s + 1, 1));
  }
  return tokens;
}

CandidateSet build_candidates(const std::vector<world::Episode>& dataset,
                              size_t target_index, const GameConfig& cfg,
                              num::Rng& rng) {
  cfg.validate();
  if (dataset.size() <= cfg.K)
    throw std::invalid_argument("build_candidates: dataset of " +
                                std::to_string(dataset.size()) +
                                " episodes cannot fill K=" +
                                std::to_string(cfg.K) + " confounders");
  if (target_index >= dataset.size())
    throw std::invalid_argument("build_candidates: target index out of range");
  const world::Episode& target = dataset[target_index];

  std::vector<Array> feats;
  std::vector<CandTag> tags;
  std::set<size_t> used{target_index};
  auto add_irrelevant = [&] {
    size_t idx = draw_irrelevant(dataset, target_index, used, rng);
    feats.push_back(dataset[idx].video_feature);
    tags.push_back(CandTag::Irrelevant);
  };
  for (size_t i = 0; i < cfg.n_irrelevant; ++i) add_irrelevant();
  for (size_t i = 0; i < cfg.n_reversed; ++i) {
    Array rev = world::video_feature_of(reverse_rows(target.frame_features));
    if (pooled_differs(rev, target.video_feature)) {
      feats.push_back(std::move(rev));
      tags.push_back(CandTag::Reversed);
      continue;
    }
    // Constant trajectory: reversal is invisible, fall back to a shuffle,
    // then to an irrelevant episode.
    Array shuf =
        world::video_feature_of(shuffle_rows(target.frame_features, rng));
    if (pooled_differs(shuf, target.video_feature)) {
      feats.push_back(std::move(shuf));
      tags.push_back(CandTag::Shuffled);
    } else {
      add_irrelevant();
    }
  }
  for (size_t i = 0; i < cfg.n_shuffled; ++i) {
    bool placed = false;
    for (int tries = 0; tries < 8 && !placed; ++tries) {
      Array shuf =
          world::video_feature_of(shuffle_rows(target.frame_features, rng));
      if (pooled_differs(shuf, target.video_feature)) {
        feats.push_back(std::move(shuf));
        tags.push_back(CandTag::Shuffled);
        placed = true;
      }
    }
    if (!placed) add_irrelevant();
  }

  CandidateSet out;
  out.target_slot =
      static_cast<size_t>(rng.uniform_int(static_cast<int>(cfg.K + 1)));
  out.features.reserve(cfg.K + 1);
  out.tags.reserve(cfg.K + 1);
  size_t next = 0;
  for (size_t slot = 0; slot < cfg.K + 1; ++slot) {
    if (slot == out.target_slot) {
      out.features.push_back(target.video_feature);
      out.tags.push_back(CandTag::Target);
    } else {
      out.features.push_back(std::move(feats[next]));
      out.tags.push_back(tags[next]);
      ++next;
    }
  }
  return out;
}

ScoreResult listen_score(models::PipelineModel& m, Tape& t, const Message& msg,
                         const CandidateSet& cands) {
  if (msg.soft.val().rows() != m.cfg.msg_len)
    throw std::invalid_argument("listen_score: message length " +
                                msg.soft.val().shape_str() + ", expected " +
                                std::to_string(m.cfg.msg_len));
  std::vector<Var> steps;
  for (size_t s = 0; s < m.cfg.msg_len; ++s)
    steps.push_back(num::slice_rows(msg.soft, s, 1));
  ScoreResult res;
  res.scores = listen_core(m, t, steps, {&cands});
  res.selection = num::k_softmax_rows(res.scores.val());
  return res;
}

double GameBatch::accuracy() const {
  if (chosen.empty()) return 0.0;
  size_t hit = 0;
  for (size_t i = 0; i < chosen.size(); ++i)
    hit += chosen[i] == cands[i]->target_slot;
  return static_cast<double>(hit) / static_cast<double>(chosen.size());
}

double GameBatch::reversed_rank_accuracy() const {
  size_t have = 0, win = 0;
  for (size_t i = 0; i < chosen.size(); ++i) {
    double best_rev = -1.0;
    for (size_t j = 0; j < cands[i]->tags.size(); ++j)
      if (cands[i]->tags[j] == CandTag::Reversed)
        best_rev = std::max(best_rev, slot_scores[i][j]);
    if (best_rev < 0.0) continue;  // fallback replaced every reversed copy
    ++have;
    win += target_scores[i] > best_rev;
  }
  return have == 0 ? 1.0 : static_cast<double>(win) / static_cast<double>(have);
}

GameBatch game_step(models::PipelineModel& m, Tape& t,
                    const std::vector<const world::Episode*>& targets,
                    const std::vector<const CandidateSet*>& cands,
                    const GameConfig& cfg, num::Rng& rng) {
  if (targets.empty() || targets.size() != cands.size())
    throw std::invalid_argument("game_step: empty or mismatched batch");
  std::vector<const Array*> features;
  features.reserve(targets.size());
  for (const world::Episode* ep : targets)
    features.push_back(&ep->video_feature);
  SpokenBatch sp = speak_batch(m, t, features, cfg.tau, rng);
  Var scores = listen_core(m, t, sp.soft_steps, cands);

  GameBatch gb;
  gb.cands = cands;
  size_t B = targets.size();
  Var total;
  for (size_t i = 0; i < B; ++i) {
    Var ce = num::ce_with_logits(num::slice_rows(scores, i, 1),
                                 cands[i]->target_slot);
    total = total.valid() ? num::add(total, ce) : ce;
  }
  gb.loss = num::scale(total, 1.0 / static_cast<double>(B));

  const Array& sv = scores.val();
  size_t kp1 = sv.cols();
  for (size_t i = 0; i < B; ++i) {
    size_t best = 0;
    std::vector<double> row(kp1);
    for (size_t j = 0; j < kp1; ++j) {
      row[j] = sv.at(i, j);
      if (row[j] > row[best]) best = j;
    }
    gb.chosen.push_back(best);
    gb.target_scores.push_back(row[cands[i]->target_slot]);
    gb.slot_scores.push_back(std::move(row));
  }
  return gb;
}

Var game_loss(models::PipelineModel& m, Tape& t,
              const std::vector<const world::Episode*>& targets,
              const std::vector<const CandidateSet*>& cands,
              const GameConfig& cfg, num::Rng& rng) {
  return game_step(m, t, targets, cands, cfg, rng).loss;
}

TrainGameResult train_game(models::PipelineModel& m, const GameConfig& cfg,
                           const std::vector<world::Episode>& dataset,
                           uint64_t seed) {
  cfg.validate();
  if (dataset.size() <= cfg.K)
    throw std::invalid_argument("train_game: dataset too small for K");
  num::Rng root(seed);
  num::Rng game_rng = root.split("game");
  auto params = m.game_params();
  num::AdamState adam;
  num::AdamConfig acfg;
  acfg.lr = cfg.lr;

  TrainGameResult res;
  std::vector<Array> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (num::Parameter* p : params) snapshot.push_back(p->value);
  };
  take_snapshot();

  auto window_mean = [&](double GameLogRow::*field) {
    size_t n = std::min(res.log.size(), cfg.eval_every);
    if (n == 0) return 0.0;
    double s = 0.0;
    for (size_t i = res.log.size() - n; i < res.log.size(); ++i)
      s += res.log[i].*field;
    return s / static_cast<double>(n);
  };

  for (size_t step = 0; step < cfg.steps; ++step) {
    num::Rng r = game_rng.split(step);
    std::vector<const world::Episode*> targets;
    std::vector<CandidateSet> sets;
    sets.reserve(cfg.batch);
    for (size_t b = 0; b < cfg.batch; ++b) {
      size_t idx = static_cast<size_t>(
          r.uniform_int(static_cast<int>(dataset.size())));
      targets.push_back(&dataset[idx]);
      sets.push_back(build_candidates(dataset, idx, cfg, r));
    }
    std::vector<const CandidateSet*> set_ptrs;
    for (const CandidateSet& s : sets) set_ptrs.push_back(&s);

    try {
      m.params.zero_grad();
      Tape t;
      GameBatch gb = game_step(m, t, targets, set_ptrs, cfg, r);
      t.backward(gb.loss);
      num::adam_step(params, adam, acfg);
      res.log.push_back({step, gb.loss.val().data[0], gb.accuracy(),
                         gb.reversed_rank_accuracy()});
    } catch (const num::NumericError& e) {
      for (size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
      res.diverged = true;
      res.failure = std::string(e.what()) + " (train_game step " +
                    std::to_string(step) + ", seed " + std::to_string(seed) +
                    ")";
      break;
    }
    res.steps_run = step + 1;

    if ((step + 1) % cfg.eval_every == 0) {
      res.window_accuracy = window_mean(&GameLogRow::accuracy);
      res.window_reversed_accuracy = window_mean(&GameLogRow::reversed_accuracy);
      take_snapshot();
      if (cfg.stop_accuracy > 0.0 &&
          res.window_accuracy >= cfg.stop_accuracy &&
          res.window_reversed_accuracy >= cfg.stop_reversed_accuracy)
        break;
    }
  }
  if (res.log.size() % cfg.eval_every != 0 && !res.log.empty()) {
    res.window_accuracy = window_mean(&GameLogRow::accuracy);
    res.window_reversed_accuracy = window_mean(&GameLogRow::reversed_accuracy);
  }
  return res;
}

std::vector<std::vector<int>> emit_emergent_corpus(
    const models::PipelineModel& m, const std::vector<world::Episode>& dataset) {
  std::vector<std::vector<int>> out;
  out.reserve(dataset.size());
  for (const world::Episode& ep : dataset)
    out.push_back(speak_greedy(m, ep.video_feature));
  return out;
}

void write_emergent_jsonl(const std::vector<std::vector<int>>& messages,
                          const std::string& path) {
  std::string out;
  for (size_t i = 0; i < messages.size(); ++i) {
    nlohmann::ordered_json rec;
    rec["episode_index"] = i;
    rec["tokens"] = messages[i];
    out += rec.dump();
    out += '\n';
  }
  util::atomic_write(path, out);
}

std::vector<std::vector<int>> read_emergent_jsonl(const std::string& path) {
  std::string blob = util::read_file(path);
  std::vector<std::vector<int>> out;
  size_t start = 0, lineno = 0;
  while (start < blob.size()) {
    size_t end = blob.find('\n', start);
    if (end == std::string::npos) end = blob.size();
    std::string line = blob.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_emergent_jsonl: " + path + ":" +
                               std::to_string(lineno) + ": " + e.what());
    }
    size_t idx = rec.at("episode_index").get<size_t>();
    if (idx + 1 != lineno)
      throw std::runtime_error("read_emergent_jsonl: " + path + ":" +
                               std::to_string(lineno) +
                               ": episode_index out of order");
    out.push_back(rec.at("tokens").get<std::vector<int>>());
  }
  return out;
}

}  // namespace ec2lab::game
