#include "ec2lab/trajlm/trajlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ec2lab/util/fsio.hpp"

namespace ec2lab::trajlm {

using num::Array;
using num::Tape;
using num::Var;

num::Var encode_trajectory(models::PipelineModel& m, Tape& t,
                           const Array& frames) {
  if (frames.rows() < 4 || frames.cols() != m.cfg.state_dim)
    throw std::invalid_argument(
        "encode_trajectory: need {L >= 4, " +
        std::to_string(m.cfg.state_dim) + "} frames, got " +
        frames.shape_str());
  return m.encoder.apply(t, t.constant(frames), true);
}

Array encode_trajectory_plain(const models::PipelineModel& m,
                              const Array& frames) {
  if (frames.rows() < 4 || frames.cols() != m.cfg.state_dim)
    throw std::invalid_argument(
        "encode_trajectory: need {L >= 4, " +
        std::to_string(m.cfg.state_dim) + "} frames, got " +
        frames.shape_str());
  return m.encoder.apply_plain(frames);
}

CropSpec draw_crop(size_t length, num::Rng& rng) {
  if (length < 4)
    throw std::invalid_argument("draw_crop: trajectory shorter than 4");
  size_t lo = (length + 9) / 10;  // ceil(0.1 L)
  size_t hi = length / 2;         // floor(0.5 L)
  CropSpec c;
  c.length = lo + static_cast<size_t>(
                      rng.uniform_int(static_cast<int>(hi - lo + 1)));
  c.start = static_cast<size_t>(
      rng.uniform_int(static_cast<int>(length - c.length + 1)));
  return c;
}

Crop apply_crop(Tape& t, Var whole, const CropSpec& spec) {
  (void)t;
  size_t L = whole.val().rows();
  if (spec.length < 1 || spec.length >= L || spec.start + spec.length > L)
    throw std::invalid_argument("apply_crop: crop [" +
                                std::to_string(spec.start) + ", +" +
                                std::to_string(spec.length) +
                                ") does not fit a length-" +
                                std::to_string(L) + " trajectory");
  Crop out;
  out.spec = spec;
  out.seg = num::slice_rows(whole, spec.start, spec.length);
  if (spec.start == 0) {
    out.rem = num::slice_rows(whole, spec.length, L - spec.length);
  } else if (spec.start + spec.length == L) {
    out.rem = num::slice_rows(whole, 0, spec.start);
  } else {
    out.rem = num::concat_rows(
        num::slice_rows(whole, 0, spec.start),
        num::slice_rows(whole, spec.start + spec.length,
                        L - spec.start - spec.length));
  }
  return out;
}

Crop crop_segment(Tape& t, Var whole, num::Rng& rng) {
  return apply_crop(t, whole, draw_crop(whole.val().rows(), rng));
}

Var complete(models::PipelineModel& m, Tape& t, const Prompt& prompt, Var rem,
             const CropSpec& crop) {
  if (crop.length < 1)
    throw std::invalid_argument("complete: empty crop");
  size_t lrem = rem.val().rows();
  size_t L = lrem + crop.length;
  if (rem.val().cols() != m.cfg.d_lat)
    throw std::invalid_argument("complete: rem width " +
                                rem.val().shape_str() + ", expected d_lat " +
                                std::to_string(m.cfg.d_lat));
  if (crop.start + crop.length > L)
    throw std::invalid_argument("complete: crop inconsistent with rem");
  if (L > m.cfg.max_frames)
    throw std::invalid_argument("complete: " + std::to_string(L) +
                                " frames exceed max " +
                                std::to_string(m.cfg.max_frames));

  Var pb;
  size_t P = 0;
  if (prompt.kind == PromptKind::Nl) {
    if (prompt.nl_ids.empty())
      throw std::invalid_argument("complete: empty NL prompt");
    if (prompt.nl_ids.size() > m.cfg.max_prompt)
      throw std::invalid_argument("complete: NL prompt of " +
                                  std::to_string(prompt.nl_ids.size()) +
                                  " tokens exceeds max " +
                                  std::to_string(m.cfg.max_prompt));
    std::vector<size_t> ids;
    for (int id : prompt.nl_ids) {
      if (id < 0 || static_cast<size_t>(id) >= m.cfg.nl_vocab)
        throw std::invalid_argument("complete: NL token " +
                                    std::to_string(id) + " out of range");
      ids.push_back(static_cast<size_t>(id));
    }
    P = ids.size();
    pb = num::add(num::embedding_lookup(t.leaf(m.nl_tok), ids),
                  num::slice_rows(t.leaf(m.prompt_pos), 0, P));
  } else if (prompt.kind == PromptKind::Ec) {
    if (!prompt.ec_soft.valid())
      throw std::invalid_argument("complete: EC prompt without soft rows");
    size_t T = prompt.ec_soft.val().rows();
    if (prompt.ec_soft.val().cols() != m.cfg.ec_vocab)
      throw std::invalid_argument("complete: EC prompt width " +
                                  prompt.ec_soft.val().shape_str() +
                                  ", expected vocab " +
                                  std::to_string(m.cfg.ec_vocab));
    if (T == 0 || T > m.cfg.max_prompt)
      throw std::invalid_argument("complete: EC prompt length " +
                                  std::to_string(T) + " out of range");
    P = T;
    Var latent = num::gelu(m.pe_fc.apply(t, prompt.ec_soft));
    pb = num::add(m.pe_adapter.apply(t, latent),
                  num::slice_rows(t.leaf(m.prompt_pos), 0, P));
  }

  Var fpos = t.leaf(m.frame_pos);
  Var rpos;
  if (crop.start > 0) rpos = num::slice_rows(fpos, 0, crop.start);
  if (crop.start + crop.length < L) {
    Var suffix = num::slice_rows(fpos, crop.start + crop.length,
                                 L - crop.start - crop.length);
    rpos = rpos.valid() ? num::concat_rows(rpos, suffix) : suffix;
  }
  Var remb = num::add(m.frame_proj.apply(t, rem), rpos);

  Var mq = num::matmul(t.constant(Array::full({crop.length, 1}, 1.0)),
                       t.leaf(m.mask_query));
  Var maskb = num::add(mq, num::slice_rows(fpos, crop.start, crop.length));

  Var x = pb.valid() ? num::concat_rows(pb, remb) : remb;
  x = num::concat_rows(x, maskb);
  Var h = m.lm.forward_seq(t, x);
  return m.out_head.apply(t, num::slice_rows(h, P + lrem, crop.length));
}

Array message_onehot(const std::vector<int>& tokens, size_t vocab) {
  Array out = Array::zeros({tokens.size(), vocab});
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<size_t>(tokens[i]) >= vocab)
      throw std::invalid_argument("message_onehot: token " +
                                  std::to_string(tokens[i]) + " out of range");
    out.at(i, static_cast<size_t>(tokens[i])) = 1.0;
  }
  return out;
}

std::vector<int> encode_prompt_ids(const models::ModelConfig& cfg,
                                   const tok::BpeVocab& vocab,
                                   const std::string& instruction) {
  std::vector<int> ids = tok::encode(vocab, instruction);
  // Instructions that out-tokenize the prompt budget keep their head; the
  // task-bearing words come first in every template.
  if (ids.size() > cfg.max_prompt) ids.resize(cfg.max_prompt);
  return ids;
}

namespace {

struct ItemLosses {
  Var ec, nl;  // invalid when the corresponding stream is disabled
};

ItemLosses item_losses(models::PipelineModel& m, Tape& t,
                       const PretrainBatchItem& item, bool want_ec,
                       bool want_nl) {
  Var whole = encode_trajectory(m, t, item.frames);
  Crop crop = apply_crop(t, whole, item.crop);
  Var target = num::detach(crop.seg);
  ItemLosses out;
  if (want_ec) {
    Prompt p = Prompt::ec(
        t.constant(message_onehot(item.ec_tokens, m.cfg.ec_vocab)));
    Var pred = complete(m, t, p, crop.rem, crop.spec);
    out.ec = num::mean_all(num::square(num::sub(pred, target)));
  }
  if (want_nl) {
    Var pred = complete(m, t, Prompt::nl(item.nl_ids), crop.rem, crop.spec);
    out.nl = num::mean_all(num::square(num::sub(pred, target)));
  }
  return out;
}

}  // namespace

std::pair<Var, Var> pretrain_losses(models::PipelineModel& m, Tape& t,
                                    const std::vector<PretrainBatchItem>& batch) {
  if (batch.empty())
    throw std::invalid_argument("pretrain_losses: empty batch");
  Var ec, nl;
  for (const PretrainBatchItem& item : batch) {
    ItemLosses il = item_losses(m, t, item, true, true);
    ec = ec.valid() ? num::add(ec, il.ec) : il.ec;
    nl = nl.valid() ? num::add(nl, il.nl) : il.nl;
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  return {num::scale(ec, inv), num::scale(nl, inv)};
}

void PretrainConfig::validate() const {
  if (!use_ec && !use_nl)
    throw std::invalid_argument(
        "PretrainConfig: both prompt streams disabled, nothing to train on");
  if (steps < 1) throw std::invalid_argument("PretrainConfig: steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("PretrainConfig: batch must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("PretrainConfig: lr must be > 0");
  if (holdout_frac < 0.0 || holdout_frac > 0.5)
    throw std::invalid_argument("PretrainConfig: holdout_frac out of [0, 0.5]");
  if (eval_every < 1)
    throw std::invalid_argument("PretrainConfig: eval_every must be >= 1");
  if (eval_items < 1)
    throw std::invalid_argument("PretrainConfig: eval_items must be >= 1");
  if (lambda_game < 0.0)
    throw std::invalid_argument("PretrainConfig: lambda_game must be >= 0");
  if (stop_heldout_ratio < 0.0 || stop_heldout_ratio >= 1.0)
    throw std::invalid_argument(
        "PretrainConfig: stop_heldout_ratio out of [0, 1)");
}

PretrainResult pretrain(models::PipelineModel& m, const PretrainConfig& cfg,
                        const std::vector<world::Episode>& dataset,
                        const std::vector<std::vector<int>>& ec_corpus,
                        const tok::BpeVocab& vocab, uint64_t seed) {
  cfg.validate();
  if (dataset.empty())
    throw std::invalid_argument("pretrain: empty dataset");
  if (cfg.use_ec && ec_corpus.size() != dataset.size())
    throw std::invalid_argument(
        "pretrain: emergent corpus has " + std::to_string(ec_corpus.size()) +
        " messages for " + std::to_string(dataset.size()) + " episodes");

  // Pre-encode every instruction once; failures surface before training.
  std::vector<std::vector<int>> nl_cache(dataset.size());
  if (cfg.use_nl)
    for (size_t i = 0; i < dataset.size(); ++i)
      nl_cache[i] = encode_prompt_ids(m.cfg, vocab, dataset[i].instruction);
  if (cfg.use_ec)
    for (size_t i = 0; i < dataset.size(); ++i)
      for (int tok : ec_corpus[i])
        if (tok < 0 || static_cast<size_t>(tok) >= m.cfg.ec_vocab)
          throw std::invalid_argument("pretrain: corpus message " +
                                      std::to_string(i) +
                                      " has out-of-range token");

  size_t n_hold = static_cast<size_t>(
      static_cast<double>(dataset.size()) * cfg.holdout_frac);
  size_t n_train = dataset.size() - n_hold;
  if (n_train == 0)
    throw std::invalid_argument("pretrain: holdout leaves no training data");

  bool with_game = m.cfg.share_backbone && cfg.lambda_game > 0.0;
  std::vector<world::Episode> train_view;
  if (with_game) {
    if (n_train <= cfg.game.K)
      throw std::invalid_argument("pretrain: training split too small for the game term");
    train_view.assign(dataset.begin(), dataset.begin() + n_train);
  }

  auto params = m.pretrain_params(with_game);
  num::AdamState adam;
  num::AdamConfig acfg;
  acfg.lr = cfg.lr;

  num::Rng root(seed);
  num::Rng step_root = root.split("pretrain");
  num::Rng hold_root = root.split("holdout");

  PretrainResult res;
  std::vector<Array> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (num::Parameter* p : params) snapshot.push_back(p->value);
  };
  take_snapshot();

  auto make_item = [&](size_t idx, num::Rng& r) {
    PretrainBatchItem item;
    item.frames = dataset[idx].frame_features;
    if (cfg.use_ec) item.ec_tokens = ec_corpus[idx];
    if (cfg.use_nl) item.nl_ids = nl_cache[idx];
    item.crop = draw_crop(item.frames.rows(), r);
    return item;
  };

  double heldout_ec = 0.0, heldout_nl = 0.0;
  size_t evals = 0;
  auto eval_holdout = [&] {
    if (n_hold == 0) return;
    num::Rng r = hold_root.split(evals);
    size_t n = std::min(cfg.eval_items, n_hold);
    double sum_ec = 0.0, sum_nl = 0.0;
    for (size_t k = 0; k < n; ++k) {
      size_t idx = n_train + (n_hold <= cfg.eval_items
                                  ? k
                                  : static_cast<size_t>(r.uniform_int(
                                        static_cast<int>(n_hold))));
      PretrainBatchItem item = make_item(idx, r);
      Tape t;
      ItemLosses il = item_losses(m, t, item, cfg.use_ec, cfg.use_nl);
      if (cfg.use_ec) sum_ec += il.ec.val().data[0];
      if (cfg.use_nl) sum_nl += il.nl.val().data[0];
    }
    heldout_ec = cfg.use_ec ? sum_ec / static_cast<double>(n) : 0.0;
    heldout_nl = cfg.use_nl ? sum_nl / static_cast<double>(n) : 0.0;
    if (evals == 0) {
      res.heldout_ec_first = heldout_ec;
      res.heldout_nl_first = heldout_nl;
    }
    res.heldout_ec_last = heldout_ec;
    res.heldout_nl_last = heldout_nl;
    ++evals;
  };
  eval_holdout();  // baseline at initialization

  double inv_b = 1.0 / static_cast<double>(cfg.batch);
  for (size_t step = 0; step < cfg.steps; ++step) {
    num::Rng r = step_root.split(step);
    try {
      m.params.zero_grad();
      double l_ec = 0.0, l_nl = 0.0, l_game = 0.0;
      for (size_t b = 0; b < cfg.batch; ++b) {
        size_t idx = static_cast<size_t>(
            r.uniform_int(static_cast<int>(n_train)));
        PretrainBatchItem item = make_item(idx, r);
        Tape t;
        ItemLosses il = item_losses(m, t, item, cfg.use_ec, cfg.use_nl);
        Var total;
        if (cfg.use_ec) {
          l_ec += il.ec.val().data[0];
          total = il.ec;
        }
        if (cfg.use_nl) {
          l_nl += il.nl.val().data[0];
          total = total.valid() ? num::add(total, il.nl) : il.nl;
        }
        t.backward(num::scale(total, inv_b));
      }
      l_ec *= inv_b;
      l_nl *= inv_b;

      if (with_game) {
        std::vector<const world::Episode*> targets;
        std::vector<game::CandidateSet> sets;
        for (size_t b = 0; b < cfg.game.batch; ++b) {
          size_t idx = static_cast<size_t>(
              r.uniform_int(static_cast<int>(n_train)));
          targets.push_back(&train_view[idx]);
          sets.push_back(
              game::build_candidates(train_view, idx, cfg.game, r));
        }
        std::vector<const game::CandidateSet*> ptrs;
        for (const auto& s : sets) ptrs.push_back(&s);
        Tape t;
        game::GameBatch gb =
            game::game_step(m, t, targets, ptrs, cfg.game, r);
        l_game = gb.loss.val().data[0];
        t.backward(num::scale(gb.loss, cfg.lambda_game));
      }

      num::adam_step(params, adam, acfg);
      res.log.push_back({step, l_ec, l_nl, l_game, heldout_ec, heldout_nl});
    } catch (const num::NumericError& e) {
      for (size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
      res.diverged = true;
      res.failure = std::string(e.what()) + " (pretrain step " +
                    std::to_string(step) + ", seed " + std::to_string(seed) +
                    ")";
      break;
    }
    res.steps_run = step + 1;

    if ((step + 1) % cfg.eval_every == 0) {
      eval_holdout();
      res.log.back().heldout_ec = heldout_ec;
      res.log.back().heldout_nl = heldout_nl;
      take_snapshot();
      if (cfg.stop_heldout_ratio > 0.0 && n_hold > 0 && cfg.use_ec &&
          heldout_ec <= cfg.stop_heldout_ratio * res.heldout_ec_first)
        break;
    }
  }
  return res;
}

void write_pretrain_log_csv(const PretrainResult& res,
                            const std::string& path) {
  std::string out = "step,l_ec,l_nl,l_game,heldout_ec,heldout_nl\n";
  char buf[192];
  for (const PretrainLogRow& row : res.log) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  row.step, row.l_ec, row.l_nl, row.l_game, row.heldout_ec,
                  row.heldout_nl);
    out += buf;
  }
  util::atomic_write(path, out);
}

}  // namespace ec2lab::trajlm
