#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ec2lab/analysis/analysis.hpp"
#include "ec2lab/util/fsio.hpp"
#include "ec2lab/world/world.hpp"

using namespace ec2lab;
using num::Array;

namespace {

models::ModelConfig tiny_cfg() {
  models::ModelConfig c;
  c.size = "tiny";
  c.d_lat = 16;
  c.ec_vocab = 64;
  c.msg_len = 6;
  return c;
}

Array column(const std::vector<double>& v) {
  Array a = Array::zeros({v.size(), 1});
  for (size_t i = 0; i < v.size(); ++i) a.at(i, 0) = v[i];
  return a;
}

}  // namespace

TEST_CASE("r_squared: exact fixtures and per-column averaging") {
  Array y = column({1, 2, 3});
  CHECK(analysis::r_squared(y, y) == 1.0);

  Array mean_pred = column({2, 2, 2});
  CHECK(analysis::r_squared(y, mean_pred) == 0.0);

  Array off = column({1, 2, 5});
  CHECK(analysis::r_squared(y, off) == -1.0);

  // Two columns: one perfect, one mean predictor; average is 1/2.
  Array y2 = Array::zeros({3, 2});
  Array p2 = Array::zeros({3, 2});
  for (size_t r = 0; r < 3; ++r) {
    y2.at(r, 0) = static_cast<double>(r + 1);
    y2.at(r, 1) = static_cast<double>(r + 1);
    p2.at(r, 0) = static_cast<double>(r + 1);
    p2.at(r, 1) = 2.0;
  }
  CHECK(analysis::r_squared(y2, p2) == 0.5);

  CHECK_THROWS_AS(analysis::r_squared(column({1, 1, 1}), mean_pred),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::r_squared(y, column({1, 2})),
                  std::invalid_argument);
}

TEST_CASE("fit_linear recovers exact affine maps and respects the ridge") {
  num::Rng rng(5);
  size_t n = 50, p = 3, q = 2;
  Array X = Array::randn({n, p}, rng, 1.0);
  Array Y = Array::zeros({n, q});
  for (size_t r = 0; r < n; ++r) {
    Y.at(r, 0) = 2.0 * X.at(r, 0) + 1.0;
    Y.at(r, 1) = -0.5 * X.at(r, 1) + 3.0 * X.at(r, 2) - 2.0;
  }
  analysis::RegressionFit fit = analysis::fit_linear(X, Y, 1e-6);
  CHECK(fit.train_r2 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit.W.at(0, 0) == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(fit.b.data[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(fit.W.at(1, 1) == doctest::Approx(-0.5).epsilon(1e-5));
  CHECK(std::isnan(fit.eval_r2));

  analysis::RegressionFit split = analysis::fit_linear_split(X, Y, 1e-6, 0.2);
  CHECK(split.eval_r2 == doctest::Approx(1.0).epsilon(1e-9));

  // Identity target: ridge perturbs the recovered weights only slightly.
  analysis::RegressionFit id0 = analysis::fit_linear(X, X, 0.0);
  analysis::RegressionFit id1 = analysis::fit_linear(X, X, 1e-6);
  double dmax = 0.0, imax = 0.0;
  for (size_t r = 0; r < p; ++r)
    for (size_t c = 0; c < p; ++c) {
      dmax = std::max(dmax, std::abs(id0.W.at(r, c) - id1.W.at(r, c)));
      double want = r == c ? 1.0 : 0.0;
      imax = std::max(imax, std::abs(id1.W.at(r, c) - want));
    }
  CHECK(dmax <= 1e-4);
  CHECK(imax <= 1e-4);

  CHECK_THROWS_AS(analysis::fit_linear(Array::zeros({0, 3}), Array::zeros({0, 2})),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::fit_linear(X, Array::zeros({n + 1, q})),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::fit_linear(X, Y, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(analysis::fit_linear_split(X, Y, 1e-6, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::fit_linear_split(Array::zeros({3, 2}),
                                             Array::zeros({3, 1}), 1e-6, 0.4),
                  std::invalid_argument);
}

TEST_CASE("independent targets score near zero on held-out rows") {
  num::Rng rng(7);
  Array X = Array::randn({200, 8}, rng, 1.0);
  Array Y = Array::randn({200, 4}, rng, 1.0);
  analysis::RegressionFit fit = analysis::fit_linear_split(X, Y, 1e-6, 0.2);
  INFO("eval r2 ", fit.eval_r2);
  CHECK(fit.eval_r2 <= 0.1);
}

TEST_CASE("cross_modal_r2: aligned deterministic pairing is fully predictable") {
  models::PipelineModel m(tiny_cfg(), 21);
  // Ten clusters, both sides a pure function of the cluster, with disjoint
  // token and word inventories so the point sets are affinely independent.
  std::vector<std::string> words{"ab", "cd", "ef", "gh", "ij",
                                 "kl", "mn", "op", "qr", "st"};
  std::vector<std::vector<int>> ec;
  std::vector<std::string> instr;
  for (size_t i = 0; i < 100; ++i) {
    size_t task = i % 10;
    std::vector<int> msg;
    for (size_t s = 0; s < 6; ++s)
      msg.push_back(static_cast<int>(task * 6 + s));
    ec.push_back(msg);
    instr.push_back(words[task]);
  }
  auto vocab = tok::train_bpe(instr, 96);
  analysis::CrossModalResult res =
      analysis::cross_modal_r2(m, ec, instr, vocab);
  CHECK(res.n_train == 80);
  CHECK(res.n_eval == 20);
  INFO("ec->nl ", res.ec_to_nl.eval_r2, " nl->ec ", res.nl_to_ec.eval_r2);
  CHECK(res.ec_to_nl.eval_r2 == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.nl_to_ec.eval_r2 == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(
      analysis::cross_modal_r2(m, ec, {instr.begin(), instr.begin() + 50},
                               vocab),
      std::invalid_argument);
}

TEST_CASE("cross_modal_r2: broken alignment collapses both directions") {
  models::PipelineModel m(tiny_cfg(), 23);
  num::Rng rng(25);
  std::vector<std::vector<int>> ec;
  std::vector<std::string> instr;
  auto corpus = world::generate_corpus(27, 100);
  for (size_t i = 0; i < corpus.size(); ++i) {
    std::vector<int> msg;
    for (size_t s = 0; s < 6; ++s) msg.push_back(rng.uniform_int(64));
    ec.push_back(msg);
    instr.push_back(corpus[i].instruction);
  }
  // Shuffle the instruction side only.
  for (size_t i = instr.size(); i > 1; --i)
    std::swap(instr[i - 1],
              instr[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
  auto vocab = tok::train_bpe(instr, 96);
  analysis::CrossModalResult res =
      analysis::cross_modal_r2(m, ec, instr, vocab);
  INFO("ec->nl ", res.ec_to_nl.eval_r2, " nl->ec ", res.nl_to_ec.eval_r2);
  CHECK(res.ec_to_nl.eval_r2 <= 0.1);
  CHECK(res.nl_to_ec.eval_r2 <= 0.1);

  std::string path = "test_analysis_r2.csv";
  analysis::write_r2_csv(res, path);
  std::string blob = util::read_file(path);
  CHECK(blob.find("direction,train_r2,eval_r2,n_train,n_eval\n") == 0);
  CHECK(blob.find("ec_to_nl,") != std::string::npos);
  CHECK(blob.find("nl_to_ec,") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("token_alignment: planted marker dominates, ubiquity cancels") {
  std::vector<std::vector<int>> ec;
  std::vector<std::string> instr;
  for (size_t i = 0; i < 40; ++i) {
    bool drawer = i % 2 == 0;
    std::vector<int> msg{1, 2};
    if (drawer) msg.push_back(5);
    ec.push_back(msg);
    instr.push_back(drawer ? "pull the drawer" : "press the button");
  }
  analysis::AlignmentTable table = analysis::token_alignment(ec, instr, 1);

  double best = table.rows.front().pmi;
  double planted = 0.0, ubiq = 0.0;
  bool found = false;
  for (const auto& r : table.rows) {
    CHECK(r.count >= 1);
    if (r.token == 5 && r.word == "drawer") {
      planted = r.pmi;
      found = true;
      CHECK(r.count == 20);
    }
    if (r.token == 1) ubiq = std::max(ubiq, std::abs(r.pmi));
    if (r.token == 1 && r.word == "the") CHECK(r.pmi == 0.0);
  }
  REQUIRE(found);
  CHECK(planted == best);
  CHECK(planted == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ubiq <= 1e-12);

  // Sorted non-increasing, and min_support filters.
  for (size_t i = 1; i < table.rows.size(); ++i)
    CHECK(table.rows[i - 1].pmi >= table.rows[i].pmi);
  analysis::AlignmentTable strict = analysis::token_alignment(ec, instr, 21);
  for (const auto& r : strict.rows) {
    CHECK(r.count >= 21);
    CHECK(r.token != 5);
  }
  CHECK(!strict.rows.empty());

  CHECK_THROWS_AS(analysis::token_alignment(ec, instr, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::token_alignment({}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(
      analysis::token_alignment(ec, {instr.begin(), instr.begin() + 3}, 1),
      std::invalid_argument);

  std::string path = "test_analysis_alignment.csv";
  analysis::write_alignment_csv(table, path);
  std::string blob = util::read_file(path);
  CHECK(blob.find("token,word,pmi,count\n") == 0);
  CHECK(blob.find("5,drawer,") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("token_alignment PMI is symmetric in its two corpora") {
  std::vector<std::vector<int>> ec;
  std::vector<std::string> instr;
  num::Rng rng(31);
  std::vector<std::string> wordpool{"alpha", "beta", "gamma", "delta"};
  for (size_t i = 0; i < 30; ++i) {
    std::vector<int> msg;
    for (size_t s = 0; s < 3; ++s) msg.push_back(rng.uniform_int(6));
    ec.push_back(msg);
    std::string text;
    for (size_t s = 0; s < 2; ++s) {
      if (s) text += " ";
      text += wordpool[static_cast<size_t>(rng.uniform_int(4))];
    }
    instr.push_back(text);
  }
  analysis::AlignmentTable fwd = analysis::token_alignment(ec, instr, 1);

  // Swap the roles: words become integer tokens, tokens become words.
  std::vector<std::vector<int>> ec_swapped;
  std::vector<std::string> instr_swapped;
  for (size_t i = 0; i < ec.size(); ++i) {
    std::vector<int> ids;
    for (const std::string& w : {instr[i].substr(0, instr[i].find(' ')),
                                 instr[i].substr(instr[i].find(' ') + 1)})
      ids.push_back(static_cast<int>(
          std::find(wordpool.begin(), wordpool.end(), w) - wordpool.begin()));
    ec_swapped.push_back(ids);
    std::string text;
    for (size_t s = 0; s < ec[i].size(); ++s) {
      if (s) text += " ";
      text += "t" + std::to_string(ec[i][s]);
    }
    instr_swapped.push_back(text);
  }
  analysis::AlignmentTable rev =
      analysis::token_alignment(ec_swapped, instr_swapped, 1);

  for (const auto& r : fwd.rows) {
    int wid = static_cast<int>(
        std::find(wordpool.begin(), wordpool.end(), r.word) - wordpool.begin());
    std::string tword = "t" + std::to_string(r.token);
    bool matched = false;
    for (const auto& s : rev.rows)
      if (s.token == wid && s.word == tword) {
        CHECK(s.pmi == doctest::Approx(r.pmi).epsilon(1e-12));
        CHECK(s.count == r.count);
        matched = true;
      }
    CHECK(matched);
  }
}

TEST_CASE("model_size_sweep echoes presets and survives failing legs") {
  auto leg = [](const std::string& size) {
    if (size == "micro") throw std::runtime_error("leg exploded");
    analysis::SweepLegResult r;
    r.mean_success = size == "base" ? 0.9 : 0.7;
    r.r2_ec_to_nl = size == "base" ? 0.8 : 0.6;
    r.r2_nl_to_ec = size == "base" ? 0.6 : 0.5;
    return r;
  };
  analysis::SweepReport rep =
      analysis::model_size_sweep({"base", "mini", "micro"}, leg);
  REQUIRE(rep.legs.size() == 3);
  CHECK(rep.legs[0].size == "base");
  CHECK(rep.legs[0].n_layer == 8);
  CHECK(rep.legs[0].n_head == 16);
  CHECK(rep.legs[0].d_model == 512);
  CHECK(rep.legs[1].n_layer == 6);
  CHECK(rep.legs[1].n_head == 6);
  CHECK(rep.legs[1].d_model == 192);
  CHECK(rep.legs[2].n_layer == 4);
  CHECK(rep.legs[2].n_head == 4);
  CHECK(rep.legs[2].d_model == 128);
  CHECK(!rep.legs[0].failed);
  CHECK(rep.legs[2].failed);
  CHECK(rep.legs[2].failure == "leg exploded");

  std::string cpath = "test_analysis_sweep.csv";
  analysis::write_sweep_csv(rep, cpath);
  std::string csv = util::read_file(cpath);
  CHECK(csv.find("size,n_layer,n_head,d_model,mean_success,r2_ec_to_nl,"
                 "r2_nl_to_ec,failed,failure\n") == 0);
  CHECK(csv.find("base,8,16,512,0.9,0.8,0.6,0,\n") != std::string::npos);
  CHECK(csv.find("mini,6,6,192,") != std::string::npos);
  CHECK(csv.find("micro,4,4,128,") != std::string::npos);
  CHECK(csv.find("leg exploded") != std::string::npos);
  std::remove(cpath.c_str());

  std::string svg = analysis::sweep_svg(rep);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("circle") != std::string::npos);
  CHECK(svg.find(">base<") != std::string::npos);
  CHECK(svg.find(">micro<") != std::string::npos);
  CHECK(svg.find("failed") != std::string::npos);

  std::string spath = "test_analysis_sweep.svg";
  analysis::write_sweep_svg(rep, spath);
  CHECK(util::read_file(spath) == svg);
  std::remove(spath.c_str());

  CHECK_THROWS_AS(analysis::model_size_sweep({"giant"}, leg),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::model_size_sweep({}, leg), std::invalid_argument);
}
