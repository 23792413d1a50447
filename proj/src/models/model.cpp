#include "ec2lab/models/model.hpp"

#include <set>
#include <stdexcept>

namespace ec2lab::models {

num::TransformerConfig ModelConfig::trunk() const {
  num::TransformerConfig c;
  if (size == "base") {
    c.n_layer = 8; c.n_head = 16; c.d_model = 512;
  } else if (size == "mini") {
    c.n_layer = 6; c.n_head = 6; c.d_model = 192;
  } else if (size == "micro") {
    c.n_layer = 4; c.n_head = 4; c.d_model = 128;
  } else if (size == "tiny") {
    // Not part of the evaluated ladder; small enough for statistical tests.
    c.n_layer = 2; c.n_head = 2; c.d_model = 32;
  } else {
    throw std::invalid_argument("ModelConfig: unknown size preset '" + size +
                                "' (expected base, mini, micro or tiny)");
  }
  c.max_len = max_prompt + max_frames;
  return c;
}

void ModelConfig::validate() const {
  (void)trunk();
  if (ec_vocab < 2) throw std::invalid_argument("ModelConfig: ec_vocab must be >= 2");
  if (msg_len < 1) throw std::invalid_argument("ModelConfig: msg_len must be >= 1");
  if (msg_len + 1 > max_prompt)
    throw std::invalid_argument("ModelConfig: msg_len + 1 exceeds max_prompt");
  if (listener_kind != "gru" && listener_kind != "transformer")
    throw std::invalid_argument("ModelConfig: unknown listener_kind '" +
                                listener_kind + "'");
}

PipelineModel::PipelineModel(const ModelConfig& c, uint64_t seed) : cfg(c) {
  cfg.validate();
  num::Rng root(seed);
  size_t d = cfg.d_model();

  num::Rng r_enc = root.split("enc");
  encoder = num::Mlp(params, "enc", cfg.state_dim, {64}, cfg.d_lat,
                     num::Act::GELU, false, r_enc);

  num::Rng r_lm = root.split("lm");
  lm = num::TransformerStack(params, "lm", cfg.trunk(), r_lm);
  if (!cfg.share_backbone) {
    num::Rng r_spt = root.split("spk.trunk");
    spk_trunk.emplace(params, "spk.trunk", cfg.trunk(), r_spt);
  }

  num::Rng r_spk = root.split("spk");
  spk_in = num::Linear(params, "spk.in_proj", cfg.video_dim, d, r_spk);
  spk_head = num::Linear(params, "spk.head", d, cfg.ec_vocab, r_spk);
  spk_tok = params.add("spk.tok_emb",
                       num::init_embedding(cfg.ec_vocab, d, r_spk));
  spk_pos = params.add("spk.pos",
                       num::init_embedding(cfg.msg_len + 1, d, r_spk));

  num::Rng r_lsn = root.split("lsn");
  // Unit-scale embedding (recurrent-net convention): a small-scale table
  // leaves the untrained hidden state near zero, which would let systematic
  // norm differences between candidate projections dominate the inverse
  // square scores instead of leaving untrained play at chance.
  lsn_tok = params.add("lsn.tok_emb",
                       num::init_embedding(cfg.ec_vocab, cfg.d_lsn, r_lsn, 1.0));
  lsn_gru = num::GruCell(params, "lsn.gru", cfg.d_lsn, cfg.d_lsn, r_lsn);
  lsn_proj = num::Mlp(params, "lsn.proj", cfg.video_dim, {64}, cfg.d_lsn,
                      num::Act::GELU, false, r_lsn);
  if (cfg.listener_kind == "transformer") {
    num::TransformerConfig lc;
    lc.n_layer = 2;
    lc.n_head = 4;
    lc.d_model = cfg.d_lsn;
    lc.max_len = cfg.msg_len + 1;
    lsn_trunk.emplace(params, "lsn.trunk", lc, r_lsn);
    lsn_pos = params.add("lsn.pos",
                         num::init_embedding(cfg.msg_len + 1, cfg.d_lsn, r_lsn));
  }

  num::Rng r_ad = root.split("adapters");
  nl_tok = params.add("nl.tok_emb",
                      num::init_embedding(cfg.nl_vocab, d, r_ad));
  pe_fc = num::Linear(params, "pe.fc", cfg.ec_vocab, 512, r_ad);
  pe_adapter = num::Linear(params, "pe.adapter", 512, d, r_ad);
  frame_proj = num::Linear(params, "fr.proj", cfg.d_lat, d, r_ad);
  out_head = num::Linear(params, "out.head", d, cfg.d_lat, r_ad);
  frame_pos = params.add("fr.pos",
                         num::init_embedding(cfg.max_frames, d, r_ad));
  prompt_pos = params.add("pr.pos",
                          num::init_embedding(cfg.max_prompt, d, r_ad));
  mask_query = params.add("mask.query", num::init_embedding(1, d, r_ad));
}

std::vector<num::Parameter*> PipelineModel::speaker_params() {
  std::vector<num::Parameter*> out = params.with_prefix("spk.");
  if (cfg.share_backbone)
    for (num::Parameter* p : params.with_prefix("lm.")) out.push_back(p);
  return out;
}

std::vector<num::Parameter*> PipelineModel::listener_params() {
  return params.with_prefix("lsn.");
}

std::vector<num::Parameter*> PipelineModel::game_params() {
  std::set<num::Parameter*> seen;
  std::vector<num::Parameter*> out;
  for (num::Parameter* p : speaker_params())
    if (seen.insert(p).second) out.push_back(p);
  for (num::Parameter* p : listener_params())
    if (seen.insert(p).second) out.push_back(p);
  return out;
}

std::vector<num::Parameter*> PipelineModel::pretrain_params(bool with_game) {
  std::vector<num::Parameter*> out;
  for (const char* prefix : {"enc.", "lm.", "nl.", "pe.", "fr.", "pr.",
                             "mask.", "out."})
    for (num::Parameter* p : params.with_prefix(prefix)) out.push_back(p);
  if (with_game) {
    std::set<num::Parameter*> seen(out.begin(), out.end());
    for (num::Parameter* p : game_params())
      if (seen.insert(p).second) out.push_back(p);
  }
  return out;
}

}  // namespace ec2lab::models
