#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ec2lab/numerics/fd.hpp"
#include "ec2lab/trajlm/trajlm.hpp"
#include "ec2lab/util/fsio.hpp"

using namespace ec2lab;
using num::Array;
using num::Tape;
using num::Var;

namespace {

models::ModelConfig tiny_cfg() {
  models::ModelConfig c;
  c.size = "tiny";
  c.d_lat = 16;
  c.ec_vocab = 64;
  c.msg_len = 6;
  return c;
}

Array random_frames(size_t L, uint64_t seed) {
  num::Rng rng(seed);
  return Array::randn({L, 8}, rng, 1.0);
}

std::vector<std::vector<int>> random_corpus_messages(size_t n, size_t T,
                                                     size_t V, uint64_t seed) {
  num::Rng rng(seed);
  std::vector<std::vector<int>> out(n);
  for (auto& msg : out)
    for (size_t s = 0; s < T; ++s)
      msg.push_back(rng.uniform_int(static_cast<int>(V)));
  return out;
}

double max_param_delta(models::PipelineModel& m, const std::string& prefix,
                       const std::vector<std::vector<double>>& before,
                       const std::vector<std::string>& names) {
  double d = 0.0;
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind(prefix, 0) != 0) continue;
    const Array& now = m.params.get(names[i])->value;
    for (size_t k = 0; k < now.data.size(); ++k)
      d = std::max(d, std::abs(now.data[k] - before[i][k]));
  }
  return d;
}

}  // namespace

TEST_CASE("encode_trajectory: frame-wise, length preserving, guarded") {
  models::PipelineModel m(tiny_cfg(), 3);
  Array frames = random_frames(9, 5);
  Tape t;
  Var out = trajlm::encode_trajectory(m, t, frames);
  REQUIRE(out.val().rows() == 9);
  REQUIRE(out.val().cols() == 16);

  // Stateless per-frame map: duplicating a frame duplicates its encoding.
  Array twice = Array::zeros({4, 8});
  for (size_t c = 0; c < 8; ++c) {
    twice.at(0, c) = frames.at(2, c);
    twice.at(1, c) = frames.at(2, c);
    twice.at(2, c) = frames.at(5, c);
    twice.at(3, c) = frames.at(5, c);
  }
  Array enc = trajlm::encode_trajectory_plain(m, twice);
  for (size_t c = 0; c < 16; ++c) {
    CHECK(enc.at(0, c) == enc.at(1, c));
    CHECK(enc.at(2, c) == enc.at(3, c));
    CHECK(enc.at(0, c) == out.val().at(2, c));
  }

  CHECK_THROWS_AS(trajlm::encode_trajectory(m, t, random_frames(3, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(trajlm::encode_trajectory_plain(m, Array::zeros({5, 7})),
                  std::invalid_argument);
}

TEST_CASE("encoder gradient through a downstream MSE matches finite differences") {
  models::PipelineModel m(tiny_cfg(), 7);
  Array frames = random_frames(6, 11);
  num::Rng trng(13);
  Array target = Array::randn({6, 16}, trng, 1.0);
  auto params = m.params.with_prefix("enc.");
  auto loss_fn = [&](bool with_grad) {
    Tape t;
    Var whole = trajlm::encode_trajectory(m, t, frames);
    Var loss = num::mean_all(num::square(num::sub(whole, t.constant(target))));
    if (with_grad) t.backward(loss);
    return loss.val().data[0];
  };
  double err =
      num::finite_difference_check_params(params, loss_fn, 1e-5, 8);
  CHECK(err <= 1e-4);
}

TEST_CASE("draw_crop bounds and conditional uniformity") {
  num::Rng rng(17);
  // L=10: lengths uniform on [1,5]; starts uniform on [0, 10-len] given len.
  size_t len_count[6] = {0, 0, 0, 0, 0, 0};
  std::vector<std::vector<size_t>> start_count(6);
  for (size_t len = 1; len <= 5; ++len) start_count[len].assign(11 - len, 0);
  const size_t draws = 10000;
  for (size_t i = 0; i < draws; ++i) {
    trajlm::CropSpec c = trajlm::draw_crop(10, rng);
    REQUIRE(c.length >= 1);
    REQUIRE(c.length <= 5);
    REQUIRE(c.start + c.length <= 10);
    ++len_count[c.length];
    ++start_count[c.length][c.start];
  }
  // Chi-square against uniform; 0.99-quantile critical values by df.
  auto chi2 = [](const std::vector<size_t>& counts, size_t total) {
    double expect = static_cast<double>(total) /
                    static_cast<double>(counts.size());
    double stat = 0.0;
    for (size_t c : counts) {
      double d = static_cast<double>(c) - expect;
      stat += d * d / expect;
    }
    return stat;
  };
  const double crit[10] = {0,     6.635, 9.210, 11.345, 13.277,
                           15.086, 16.812, 18.475, 20.090, 21.666};
  std::vector<size_t> lens(len_count + 1, len_count + 6);
  CHECK(chi2(lens, draws) < crit[4]);
  for (size_t len = 1; len <= 5; ++len) {
    size_t df = start_count[len].size() - 1;
    CHECK(chi2(start_count[len], len_count[len]) < crit[df]);
  }

  for (size_t i = 0; i < 200; ++i) {
    trajlm::CropSpec c = trajlm::draw_crop(4, rng);
    CHECK(c.length >= 1);
    CHECK(c.length <= 2);
  }
  CHECK_THROWS_AS(trajlm::draw_crop(3, rng), std::invalid_argument);
}

TEST_CASE("apply_crop partitions without loss or duplication") {
  models::PipelineModel m(tiny_cfg(), 19);
  Array frames = random_frames(12, 23);
  num::Rng rng(29);
  for (size_t trial = 0; trial < 50; ++trial) {
    Tape t;
    Var whole = trajlm::encode_trajectory(m, t, frames);
    trajlm::Crop crop = trajlm::crop_segment(t, whole, rng);
    size_t L = 12, len = crop.spec.length, start = crop.spec.start;
    REQUIRE(crop.seg.val().rows() == len);
    REQUIRE(crop.rem.val().rows() == L - len);
    for (size_t r = 0; r < len; ++r)
      for (size_t c = 0; c < 16; ++c)
        CHECK(crop.seg.val().at(r, c) == whole.val().at(start + r, c));
    for (size_t r = 0; r < L - len; ++r) {
      size_t orig = r < start ? r : r + len;
      for (size_t c = 0; c < 16; ++c)
        CHECK(crop.rem.val().at(r, c) == whole.val().at(orig, c));
    }
  }
  Tape t;
  Var whole = trajlm::encode_trajectory(m, t, frames);
  CHECK_THROWS_AS(trajlm::apply_crop(t, whole, {4, 0}), std::invalid_argument);
  CHECK_THROWS_AS(trajlm::apply_crop(t, whole, {8, 5}), std::invalid_argument);
  CHECK_THROWS_AS(trajlm::apply_crop(t, whole, {0, 12}), std::invalid_argument);
}

TEST_CASE("complete: shapes, prompt kinds, sensitivity, determinism") {
  models::PipelineModel m(tiny_cfg(), 31);
  Array frames = random_frames(10, 37);
  trajlm::CropSpec spec{3, 4};

  Tape t;
  Var whole = trajlm::encode_trajectory(m, t, frames);
  trajlm::Crop crop = trajlm::apply_crop(t, whole, spec);

  Var none1 = trajlm::complete(m, t, trajlm::Prompt::none(), crop.rem, spec);
  REQUIRE(none1.val().rows() == 4);
  REQUIRE(none1.val().cols() == 16);
  Var none2 = trajlm::complete(m, t, trajlm::Prompt::none(), crop.rem, spec);
  CHECK(none1.val().data == none2.val().data);

  Var nl1 = trajlm::complete(m, t, trajlm::Prompt::nl({1, 2, 3}), crop.rem, spec);
  Var nl2 = trajlm::complete(m, t, trajlm::Prompt::nl({4, 5, 6}), crop.rem, spec);
  REQUIRE(nl1.val().rows() == 4);
  double d_nl = 0.0, d_kind = 0.0, d_ec = 0.0;
  for (size_t i = 0; i < nl1.val().numel(); ++i) {
    d_nl = std::max(d_nl, std::abs(nl1.val().data[i] - nl2.val().data[i]));
    d_kind = std::max(d_kind, std::abs(nl1.val().data[i] - none1.val().data[i]));
  }
  CHECK(d_nl > 0.0);    // prompt content reaches every mask position
  CHECK(d_kind > 0.0);  // prompt presence does too

  Var ec1 = trajlm::complete(
      m, t, trajlm::Prompt::ec(t.constant(trajlm::message_onehot(
                {1, 2, 3, 4, 5, 6}, 64))),
      crop.rem, spec);
  Var ec2 = trajlm::complete(
      m, t, trajlm::Prompt::ec(t.constant(trajlm::message_onehot(
                {1, 2, 3, 4, 5, 7}, 64))),
      crop.rem, spec);
  REQUIRE(ec1.val().rows() == 4);
  for (size_t i = 0; i < ec1.val().numel(); ++i)
    d_ec = std::max(d_ec, std::abs(ec1.val().data[i] - ec2.val().data[i]));
  CHECK(d_ec > 0.0);
}

TEST_CASE("complete: mask queries carry the cropped positions") {
  models::PipelineModel m(tiny_cfg(), 41);
  // A constant trajectory makes the remaining frames identical, so any
  // output difference can only come from the positional information.
  Array frames = Array::full({8, 8}, 0.25);
  Tape t;
  Var whole = trajlm::encode_trajectory(m, t, frames);
  trajlm::Crop a = trajlm::apply_crop(t, whole, {2, 2});
  trajlm::Crop b = trajlm::apply_crop(t, whole, {4, 2});
  Var pa = trajlm::complete(m, t, trajlm::Prompt::none(), a.rem, a.spec);
  Var pb = trajlm::complete(m, t, trajlm::Prompt::none(), b.rem, b.spec);
  double d = 0.0;
  for (size_t i = 0; i < pa.val().numel(); ++i)
    d = std::max(d, std::abs(pa.val().data[i] - pb.val().data[i]));
  CHECK(d > 0.0);
}

TEST_CASE("complete rejects oversized or malformed inputs") {
  models::PipelineModel m(tiny_cfg(), 43);
  Tape t;
  Var rem_ok = t.constant(Array::zeros({6, 16}));
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::none(), rem_ok, {0, 0}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::none(), rem_ok, {20, 3}),
      std::invalid_argument);
  Var rem_big = t.constant(Array::zeros({60, 16}));
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::none(), rem_big, {0, 10}),
      std::invalid_argument);  // 70 frames exceed the position table
  Var rem_wide = t.constant(Array::zeros({6, 17}));
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::none(), rem_wide, {0, 2}),
      std::invalid_argument);

  std::vector<int> long_prompt(17, 1);
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::nl(long_prompt), rem_ok, {0, 2}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::nl({}), rem_ok, {0, 2}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      trajlm::complete(m, t, trajlm::Prompt::nl({200}), rem_ok, {0, 2}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      trajlm::complete(m, t,
                       trajlm::Prompt::ec(t.constant(Array::zeros({6, 63}))),
                       rem_ok, {0, 2}),
      std::invalid_argument);
}

TEST_CASE("message_onehot encodes rows and validates range") {
  Array oh = trajlm::message_onehot({2, 0}, 4);
  REQUIRE(oh.rows() == 2);
  REQUIRE(oh.cols() == 4);
  CHECK(oh.at(0, 2) == 1.0);
  CHECK(oh.at(1, 0) == 1.0);
  double sum = 0.0;
  for (double v : oh.data) sum += v;
  CHECK(sum == 2.0);
  CHECK_THROWS_AS(trajlm::message_onehot({4}, 4), std::invalid_argument);
  CHECK_THROWS_AS(trajlm::message_onehot({-1}, 4), std::invalid_argument);
}

TEST_CASE("pretrain_losses: zero-model closed form and stream separation") {
  models::PipelineModel m(tiny_cfg(), 47);
  trajlm::PretrainBatchItem item;
  item.frames = random_frames(10, 53);
  item.ec_tokens = {1, 2, 3, 4, 5, 6};
  item.nl_ids = {3, 1, 4};
  item.crop = {2, 3};

  {
    // Zero read-out head: prediction is exactly zero, so each loss is the
    // mean squared segment latent.
    models::PipelineModel z(tiny_cfg(), 47);
    for (const char* name : {"out.head.weight", "out.head.bias"}) {
      Array& v = z.params.get(name)->value;
      std::fill(v.data.begin(), v.data.end(), 0.0);
    }
    Array latent = trajlm::encode_trajectory_plain(z, item.frames);
    double expect = 0.0;
    for (size_t r = 0; r < 3; ++r)
      for (size_t c = 0; c < 16; ++c)
        expect += latent.at(2 + r, c) * latent.at(2 + r, c);
    expect /= 3 * 16;
    Tape t;
    auto [ec, nl] = trajlm::pretrain_losses(z, t, {item});
    CHECK(ec.val().data[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(nl.val().data[0] == doctest::Approx(expect).epsilon(1e-12));

    // Zeroing the encoder as well zeroes the targets, and with them the loss.
    for (num::Parameter* p : z.params.with_prefix("enc."))
      std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
    Tape t2;
    auto [ec0, nl0] = trajlm::pretrain_losses(z, t2, {item});
    CHECK(ec0.val().data[0] == 0.0);
    CHECK(nl0.val().data[0] == 0.0);
  }

  // Changing one prompt stream leaves the other loss bit-identical.
  Tape t;
  auto [ec_a, nl_a] = trajlm::pretrain_losses(m, t, {item});
  trajlm::PretrainBatchItem other_nl = item;
  other_nl.nl_ids = {9, 9};
  trajlm::PretrainBatchItem other_ec = item;
  other_ec.ec_tokens = {0, 0, 0, 0, 0, 0};
  Tape t2;
  auto [ec_b, nl_b] = trajlm::pretrain_losses(m, t2, {other_nl});
  Tape t3;
  auto [ec_c, nl_c] = trajlm::pretrain_losses(m, t3, {other_ec});
  CHECK(ec_a.val().data[0] == ec_b.val().data[0]);
  CHECK(nl_a.val().data[0] != nl_b.val().data[0]);
  CHECK(nl_a.val().data[0] == nl_c.val().data[0]);
  CHECK(ec_a.val().data[0] != ec_c.val().data[0]);

  // Batch mean matches the singles.
  trajlm::PretrainBatchItem second = item;
  second.frames = random_frames(8, 59);
  second.crop = {1, 2};
  Tape t4;
  auto [ec_two, nl_two] = trajlm::pretrain_losses(m, t4, {item, second});
  Tape t5;
  auto [ec_s, nl_s] = trajlm::pretrain_losses(m, t5, {second});
  CHECK(ec_two.val().data[0] ==
        doctest::Approx((ec_a.val().data[0] + ec_s.val().data[0]) / 2)
            .epsilon(1e-14));
  CHECK(nl_two.val().data[0] ==
        doctest::Approx((nl_a.val().data[0] + nl_s.val().data[0]) / 2)
            .epsilon(1e-14));

  CHECK_THROWS_AS(trajlm::pretrain_losses(m, t, {}), std::invalid_argument);
}

TEST_CASE("pretrain: config validation and corpus alignment") {
  models::PipelineModel m(tiny_cfg(), 61);
  auto corpus = world::generate_corpus(61, 10);
  auto vocab = tok::train_bpe({"press the button"}, 40);
  trajlm::PretrainConfig cfg;
  cfg.use_ec = false;
  cfg.use_nl = false;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.use_ec = true;
  CHECK_THROWS_AS(
      trajlm::pretrain(m, cfg, corpus,
                       random_corpus_messages(9, 6, 64, 1), vocab, 5),
      std::invalid_argument);
}

TEST_CASE("pretrain: deterministic smoke run with the shared-trunk game term") {
  auto corpus = world::generate_corpus(62, 24);
  auto msgs = random_corpus_messages(24, 6, 64, 7);
  std::vector<std::string> instr;
  for (const auto& ep : corpus) instr.push_back(ep.instruction);
  auto vocab = tok::train_bpe(instr, 96);

  trajlm::PretrainConfig cfg;
  cfg.steps = 6;
  cfg.batch = 4;
  cfg.eval_every = 3;
  cfg.eval_items = 2;
  cfg.game.batch = 4;

  models::PipelineModel m1(tiny_cfg(), 63);
  std::vector<std::string> names;
  std::vector<std::vector<double>> before;
  for (num::Parameter* p : m1.params.all()) {
    names.push_back(p->name);
    before.push_back(p->value.data);
  }
  trajlm::PretrainResult r1 = trajlm::pretrain(m1, cfg, corpus, msgs, vocab, 64);

  REQUIRE(r1.log.size() == 6);
  CHECK(r1.steps_run == 6);
  CHECK(!r1.diverged);
  for (const auto& row : r1.log) {
    CHECK(std::isfinite(row.l_ec));
    CHECK(std::isfinite(row.l_nl));
    CHECK(std::isfinite(row.l_game));
    CHECK(row.l_ec > 0.0);
    CHECK(row.l_nl > 0.0);
    CHECK(row.l_game > 0.0);
  }
  CHECK(r1.heldout_ec_first > 0.0);
  CHECK(r1.heldout_nl_first > 0.0);
  // The joint update reaches every module it should, and no other.
  CHECK(max_param_delta(m1, "enc.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "lm.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "pe.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "nl.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "fr.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "out.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "mask.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "spk.", before, names) > 0.0);
  CHECK(max_param_delta(m1, "lsn.", before, names) > 0.0);

  models::PipelineModel m2(tiny_cfg(), 63);
  trajlm::PretrainResult r2 = trajlm::pretrain(m2, cfg, corpus, msgs, vocab, 64);
  REQUIRE(r2.log.size() == 6);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(r1.log[i].l_ec == r2.log[i].l_ec);
    CHECK(r1.log[i].l_nl == r2.log[i].l_nl);
    CHECK(r1.log[i].l_game == r2.log[i].l_game);
    CHECK(r1.log[i].heldout_ec == r2.log[i].heldout_ec);
  }
  for (num::Parameter* p : m1.params.all())
    CHECK(p->value.data == m2.params.get(p->name)->value.data);
}

TEST_CASE("pretrain ablation: disabled stream trains nothing of its own") {
  auto corpus = world::generate_corpus(65, 16);
  auto msgs = random_corpus_messages(16, 6, 64, 9);
  std::vector<std::string> instr;
  for (const auto& ep : corpus) instr.push_back(ep.instruction);
  auto vocab = tok::train_bpe(instr, 96);

  trajlm::PretrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 3;
  cfg.use_ec = false;
  cfg.lambda_game = 0.0;  // isolate the completion streams

  models::PipelineModel m(tiny_cfg(), 67);
  std::vector<std::string> names;
  std::vector<std::vector<double>> before;
  for (num::Parameter* p : m.params.all()) {
    names.push_back(p->name);
    before.push_back(p->value.data);
  }
  trajlm::PretrainResult r = trajlm::pretrain(m, cfg, corpus, msgs, vocab, 68);
  REQUIRE(r.steps_run == 2);
  for (const auto& row : r.log) {
    CHECK(row.l_ec == 0.0);
    CHECK(row.l_game == 0.0);
    CHECK(row.l_nl > 0.0);
  }
  CHECK(r.heldout_ec_last == 0.0);
  CHECK(max_param_delta(m, "pe.", before, names) == 0.0);
  CHECK(max_param_delta(m, "spk.", before, names) == 0.0);
  CHECK(max_param_delta(m, "lsn.", before, names) == 0.0);
  CHECK(max_param_delta(m, "nl.", before, names) > 0.0);
  CHECK(max_param_delta(m, "lm.", before, names) > 0.0);
}

TEST_CASE("pretrain: a short run reduces held-out completion error") {
  auto corpus = world::generate_corpus(69, 32);
  auto msgs = random_corpus_messages(32, 6, 64, 11);
  std::vector<std::string> instr;
  for (const auto& ep : corpus) instr.push_back(ep.instruction);
  auto vocab = tok::train_bpe(instr, 96);

  trajlm::PretrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 8;
  cfg.eval_every = 20;
  cfg.eval_items = 3;
  cfg.lambda_game = 0.0;

  models::PipelineModel m(tiny_cfg(), 71);
  trajlm::PretrainResult r = trajlm::pretrain(m, cfg, corpus, msgs, vocab, 72);
  REQUIRE(r.steps_run == 40);
  INFO("heldout ec ", r.heldout_ec_first, " -> ", r.heldout_ec_last,
       ", nl ", r.heldout_nl_first, " -> ", r.heldout_nl_last);
  CHECK(r.heldout_ec_last < r.heldout_ec_first);
  CHECK(r.heldout_nl_last < r.heldout_nl_first);
  double head = 0.0, tail = 0.0;
  for (size_t i = 0; i < 10; ++i) {
    head += r.log[i].l_ec + r.log[i].l_nl;
    tail += r.log[40 - 10 + i].l_ec + r.log[40 - 10 + i].l_nl;
  }
  CHECK(tail < head);
}

TEST_CASE("pretrain: poisoned data aborts with the last good parameters") {
  world::Episode bad;
  bad.frame_features = Array::full({6, 8}, std::nan(""));
  bad.video_feature = Array::zeros({24});
  std::vector<world::Episode> dataset{bad};
  std::vector<std::vector<int>> msgs{{0, 1, 2, 3, 4, 5}};
  auto vocab = tok::train_bpe({"press the button"}, 40);

  trajlm::PretrainConfig cfg;
  cfg.steps = 5;
  cfg.batch = 2;
  cfg.use_nl = false;
  cfg.lambda_game = 0.0;
  cfg.holdout_frac = 0.0;

  models::PipelineModel m(tiny_cfg(), 73);
  models::PipelineModel untouched(tiny_cfg(), 73);
  trajlm::PretrainResult r = trajlm::pretrain(m, cfg, dataset, msgs, vocab, 74);
  CHECK(r.diverged);
  CHECK(r.steps_run == 0);
  CHECK(r.log.empty());
  CHECK(r.failure.find("step 0") != std::string::npos);
  for (num::Parameter* p : m.params.all())
    CHECK(p->value.data == untouched.params.get(p->name)->value.data);
}

TEST_CASE("pretrain log round-trips through csv") {
  trajlm::PretrainResult r;
  r.log.push_back({0, 1.5, 2.5, 0.25, 3.5, 4.5});
  r.log.push_back({1, 1.25, 2.25, 0.125, 3.5, 4.5});
  std::string path = "test_trajlm_log.csv";
  trajlm::write_pretrain_log_csv(r, path);
  std::string blob = util::read_file(path);
  CHECK(blob.find("step,l_ec,l_nl,l_game,heldout_ec,heldout_nl\n") == 0);
  CHECK(blob.find("1,1.25,2.25,0.125,3.5,4.5\n") != std::string::npos);
  std::remove(path.c_str());
}
