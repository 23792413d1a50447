#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ec2lab/numerics/nn.hpp"

namespace ec2lab::models {

// Shapes every network in the pipeline is built from. The trunk size presets
// are looked up by name; everything else has a fixed desk-scale default.
struct ModelConfig {
  std::string size = "micro";      // "base" 8/16/512, "mini" 6/6/192, "micro" 4/4/128
  size_t state_dim = 8;
  size_t video_dim = 24;
  size_t d_lat = 32;               // latent frame width
  size_t nl_vocab = 128;
  size_t ec_vocab = 1024;          // message vocabulary V
  size_t msg_len = 10;             // message length T
  size_t d_lsn = 64;               // listener hidden width
  size_t max_frames = 64;
  size_t max_prompt = 16;
  bool share_backbone = true;      // speaker generates with the LM trunk
  std::string listener_kind = "gru";  // "gru" | "transformer"

  num::TransformerConfig trunk() const;  // throws on unknown size name
  size_t d_model() const { return trunk().d_model; }
  void validate() const;
};

// Every network of the pipeline over a single parameter store. Prefixes:
//   enc.*    per-frame trajectory encoder, state -> d_lat
//   lm.*     the trunk; the speaker generates with it when share_backbone
//   spk.*    speaker adapters: video-feature projection, token embedding,
//            positions, vocabulary head (+ spk.trunk.* when not sharing)
//   lsn.*    listener: token embedding, GRU (or small trunk), candidate MLP
//   nl.*     natural-language token embedding
//   pe.*     prompt embedder: message distribution -> 512 -> d_model
//   fr.*     latent frame projection and frame position table
//   pr.*     prompt position table
//   mask.*   learned query vector marking cropped positions
//   out.*    d_model -> d_lat read-out head
struct PipelineModel {
  ModelConfig cfg;
  num::ParamStore params;

  num::Mlp encoder;
  num::TransformerStack lm;
  std::optional<num::TransformerStack> spk_trunk;
  num::Linear spk_in, spk_head;
  num::Parameter* spk_tok = nullptr;
  num::Parameter* spk_pos = nullptr;
  num::Parameter* lsn_tok = nullptr;
  num::GruCell lsn_gru;
  std::optional<num::TransformerStack> lsn_trunk;  // listener_kind "transformer"
  num::Parameter* lsn_pos = nullptr;               // idem
  num::Mlp lsn_proj;
  num::Parameter* nl_tok = nullptr;
  num::Linear pe_fc, pe_adapter;
  num::Linear frame_proj, out_head;
  num::Parameter* frame_pos = nullptr;
  num::Parameter* prompt_pos = nullptr;
  num::Parameter* mask_query = nullptr;

  PipelineModel(const ModelConfig& cfg, uint64_t seed);

  num::TransformerStack& speaker_trunk() {
    return spk_trunk ? *spk_trunk : lm;
  }
  const num::TransformerStack& speaker_trunk() const {
    return spk_trunk ? *spk_trunk : lm;
  }

  // Optimizer views. No running stats exist in this store, so prefix slices
  // are exactly the trainable sets.
  std::vector<num::Parameter*> speaker_params();
  std::vector<num::Parameter*> listener_params();
  std::vector<num::Parameter*> game_params();      // speaker + listener
  std::vector<num::Parameter*> pretrain_params(bool with_game);
};

}  // namespace ec2lab::models
