#include "ec2lab/analysis/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ec2lab/trajlm/trajlm.hpp"
#include "ec2lab/util/fsio.hpp"

namespace ec2lab::analysis {

using num::Array;

double r_squared(const Array& y_true, const Array& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols() ||
      y_true.rows() == 0)
    throw std::invalid_argument("r_squared: shapes " + y_true.shape_str() +
                                " vs " + y_pred.shape_str());
  size_t n = y_true.rows(), q = y_true.cols();
  double acc = 0.0;
  for (size_t c = 0; c < q; ++c) {
    double mean = 0.0;
    for (size_t r = 0; r < n; ++r) mean += y_true.at(r, c);
    mean /= static_cast<double>(n);
    double ss_tot = 0.0, ss_res = 0.0;
    for (size_t r = 0; r < n; ++r) {
      double dt = y_true.at(r, c) - mean;
      double dr = y_true.at(r, c) - y_pred.at(r, c);
      ss_tot += dt * dt;
      ss_res += dr * dr;
    }
    if (ss_tot == 0.0)
      throw std::invalid_argument("r_squared: column " + std::to_string(c) +
                                  " of y_true is constant");
    acc += 1.0 - ss_res / ss_tot;
  }
  return acc / static_cast<double>(q);
}

RegressionFit fit_linear(const Array& X, const Array& Y, double ridge) {
  if (X.rows() == 0) throw std::invalid_argument("fit_linear: no rows");
  if (X.rows() != Y.rows())
    throw std::invalid_argument("fit_linear: " + X.shape_str() + " vs " +
                                Y.shape_str());
  if (ridge < 0) throw std::invalid_argument("fit_linear: negative ridge");
  size_t n = X.rows(), p = X.cols(), q = Y.cols();

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                            Eigen::RowMajor>;
  Eigen::Map<const Mat> Xm(X.data.data(), n, p);
  Eigen::Map<const Mat> Ym(Y.data.data(), n, q);
  Eigen::RowVectorXd xmean = Xm.colwise().mean();
  Eigen::RowVectorXd ymean = Ym.colwise().mean();
  Mat Xc = Xm.rowwise() - xmean;
  Mat Yc = Ym.rowwise() - ymean;

  Mat gram = Xc.transpose() * Xc;
  gram.diagonal().array() += ridge;
  Mat W = gram.ldlt().solve(Xc.transpose() * Yc);

  RegressionFit fit;
  fit.W = Array::zeros({p, q});
  for (size_t r = 0; r < p; ++r)
    for (size_t c = 0; c < q; ++c) fit.W.at(r, c) = W(r, c);
  Eigen::RowVectorXd bias = ymean - xmean * W;
  fit.b = Array::zeros({q});
  for (size_t c = 0; c < q; ++c) fit.b.data[c] = bias(c);
  fit.train_r2 = r_squared(Y, predict(fit, X));
  fit.eval_r2 = std::nan("");
  return fit;
}

num::Array predict(const RegressionFit& fit, const Array& X) {
  if (X.cols() != fit.W.rows())
    throw std::invalid_argument("predict: " + X.shape_str() + " against " +
                                fit.W.shape_str());
  return num::k_add_rowvec(num::k_gemm(X, fit.W), fit.b);
}

RegressionFit fit_linear_split(const Array& X, const Array& Y, double ridge,
                               double eval_frac) {
  if (!(eval_frac > 0.0) || !(eval_frac < 1.0))
    throw std::invalid_argument("fit_linear_split: eval_frac outside (0,1)");
  size_t n = X.rows();
  size_t n_eval = static_cast<size_t>(static_cast<double>(n) * eval_frac);
  if (n_eval == 0 || n - n_eval < 2)
    throw std::invalid_argument("fit_linear_split: " + std::to_string(n) +
                                " rows leave no usable split");
  size_t n_train = n - n_eval;
  RegressionFit fit = fit_linear(num::k_slice_rows(X, 0, n_train),
                                 num::k_slice_rows(Y, 0, n_train), ridge);
  fit.eval_r2 = r_squared(num::k_slice_rows(Y, n_train, n_eval),
                          predict(fit, num::k_slice_rows(X, n_train, n_eval)));
  return fit;
}

num::Array ec_embedding(const models::PipelineModel& m,
                        const std::vector<int>& tokens) {
  Array onehot = trajlm::message_onehot(tokens, m.cfg.ec_vocab);
  Array rows = m.pe_adapter.apply_plain(
      num::k_gelu(m.pe_fc.apply_plain(onehot)));
  size_t T = rows.rows(), d = rows.cols();
  Array out = Array::zeros({1, d});
  for (size_t r = 0; r < T; ++r)
    for (size_t c = 0; c < d; ++c) out.at(0, c) += rows.at(r, c);
  for (size_t c = 0; c < d; ++c) out.at(0, c) /= static_cast<double>(T);
  return out;
}

num::Array nl_embedding(const models::PipelineModel& m,
                        const tok::BpeVocab& vocab,
                        const std::string& instruction) {
  std::vector<int> ids = tok::encode(vocab, instruction);
  if (ids.empty())
    throw std::invalid_argument("nl_embedding: instruction tokenized to nothing");
  size_t d = m.cfg.d_model();
  Array out = Array::zeros({1, d});
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= m.cfg.nl_vocab)
      throw std::invalid_argument("nl_embedding: token " + std::to_string(id) +
                                  " outside the embedding table");
    for (size_t c = 0; c < d; ++c)
      out.at(0, c) += m.nl_tok->value.at(static_cast<size_t>(id), c);
  }
  for (size_t c = 0; c < d; ++c)
    out.at(0, c) /= static_cast<double>(ids.size());
  return out;
}

CrossModalResult cross_modal_r2(const models::PipelineModel& m,
                                const std::vector<std::vector<int>>& ec_corpus,
                                const std::vector<std::string>& instructions,
                                const tok::BpeVocab& vocab, double ridge,
                                double eval_frac) {
  if (ec_corpus.size() != instructions.size())
    throw std::invalid_argument("cross_modal_r2: " +
                                std::to_string(ec_corpus.size()) +
                                " messages vs " +
                                std::to_string(instructions.size()) +
                                " instructions");
  size_t n = ec_corpus.size(), d = m.cfg.d_model();
  if (n < 5)
    throw std::invalid_argument("cross_modal_r2: too few episodes");
  Array E = Array::zeros({n, d});
  Array L = Array::zeros({n, d});
  for (size_t i = 0; i < n; ++i) {
    Array e = ec_embedding(m, ec_corpus[i]);
    Array l = nl_embedding(m, vocab, instructions[i]);
    for (size_t c = 0; c < d; ++c) {
      E.at(i, c) = e.at(0, c);
      L.at(i, c) = l.at(0, c);
    }
  }
  CrossModalResult res;
  res.ec_to_nl = fit_linear_split(E, L, ridge, eval_frac);
  res.nl_to_ec = fit_linear_split(L, E, ridge, eval_frac);
  size_t n_eval = static_cast<size_t>(static_cast<double>(n) * eval_frac);
  res.n_train = n - n_eval;
  res.n_eval = n_eval;
  return res;
}

void write_r2_csv(const CrossModalResult& res, const std::string& path) {
  char buf[160];
  std::string out = "direction,train_r2,eval_r2,n_train,n_eval\n";
  std::snprintf(buf, sizeof(buf), "ec_to_nl,%.10g,%.10g,%zu,%zu\n",
                res.ec_to_nl.train_r2, res.ec_to_nl.eval_r2, res.n_train,
                res.n_eval);
  out += buf;
  std::snprintf(buf, sizeof(buf), "nl_to_ec,%.10g,%.10g,%zu,%zu\n",
                res.nl_to_ec.train_r2, res.nl_to_ec.eval_r2, res.n_train,
                res.n_eval);
  out += buf;
  util::atomic_write(path, out);
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

AlignmentTable token_alignment(const std::vector<std::vector<int>>& ec_corpus,
                               const std::vector<std::string>& instructions,
                               size_t min_support) {
  if (ec_corpus.size() != instructions.size())
    throw std::invalid_argument("token_alignment: corpora of " +
                                std::to_string(ec_corpus.size()) + " and " +
                                std::to_string(instructions.size()) +
                                " episodes");
  if (ec_corpus.empty())
    throw std::invalid_argument("token_alignment: empty corpora");
  if (min_support == 0)
    throw std::invalid_argument("token_alignment: min_support must be >= 1");

  size_t n = ec_corpus.size();
  std::map<int, size_t> tok_count;
  std::map<std::string, size_t> word_count;
  std::map<std::pair<int, std::string>, size_t> joint;
  for (size_t i = 0; i < n; ++i) {
    std::set<int> toks(ec_corpus[i].begin(), ec_corpus[i].end());
    std::vector<std::string> wv = split_words(instructions[i]);
    std::set<std::string> words(wv.begin(), wv.end());
    for (int t : toks) ++tok_count[t];
    for (const std::string& w : words) ++word_count[w];
    for (int t : toks)
      for (const std::string& w : words) ++joint[{t, w}];
  }

  AlignmentTable table;
  for (const auto& [key, c] : joint) {
    if (c < min_support) continue;
    AlignmentRow row;
    row.token = key.first;
    row.word = key.second;
    row.count = c;
    row.pmi = std::log(static_cast<double>(c) * static_cast<double>(n) /
                       (static_cast<double>(tok_count[key.first]) *
                        static_cast<double>(word_count[key.second])));
    table.rows.push_back(std::move(row));
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const AlignmentRow& a, const AlignmentRow& b) {
              if (a.pmi != b.pmi) return a.pmi > b.pmi;
              if (a.token != b.token) return a.token < b.token;
              return a.word < b.word;
            });
  return table;
}

void write_alignment_csv(const AlignmentTable& table, const std::string& path) {
  std::string out = "token,word,pmi,count\n";
  char buf[160];
  for (const AlignmentRow& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%zu\n", r.token,
                  r.word.c_str(), r.pmi, r.count);
    out += buf;
  }
  util::atomic_write(path, out);
}

SweepReport model_size_sweep(const std::vector<std::string>& sizes,
                             const SweepLegFn& run_leg) {
  if (sizes.empty())
    throw std::invalid_argument("model_size_sweep: no sizes");
  SweepReport report;
  for (const std::string& size : sizes) {
    SweepLegResult leg;
    leg.size = size;
    models::ModelConfig probe;
    probe.size = size;
    num::TransformerConfig tc = probe.trunk();  // throws on unknown size
    leg.n_layer = tc.n_layer;
    leg.n_head = tc.n_head;
    leg.d_model = tc.d_model;
    try {
      SweepLegResult run = run_leg(size);
      leg.mean_success = run.mean_success;
      leg.r2_ec_to_nl = run.r2_ec_to_nl;
      leg.r2_nl_to_ec = run.r2_nl_to_ec;
      leg.failed = run.failed;
      leg.failure = run.failure;
    } catch (const std::exception& e) {
      leg.failed = true;
      leg.failure = e.what();
    }
    report.legs.push_back(std::move(leg));
  }
  return report;
}

void write_sweep_csv(const SweepReport& report, const std::string& path) {
  std::string out =
      "size,n_layer,n_head,d_model,mean_success,r2_ec_to_nl,r2_nl_to_ec,"
      "failed,failure\n";
  char buf[320];
  for (const SweepLegResult& l : report.legs) {
    std::string failure = l.failure;
    for (char& c : failure)
      if (c == ',' || c == '\n') c = ';';
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%.10g,%.10g,%.10g,%d,%s\n",
                  l.size.c_str(), l.n_layer, l.n_head, l.d_model,
                  l.mean_success, l.r2_ec_to_nl, l.r2_nl_to_ec,
                  l.failed ? 1 : 0, failure.c_str());
    out += buf;
  }
  util::atomic_write(path, out);
}

namespace {

struct PanelGeom {
  double x0, y0, w, h;  // plot box
  double ymin, ymax;
  double px(double frac, size_t i, size_t n) const {
    (void)frac;
    return x0 + w * (n == 1 ? 0.5
                            : static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  }
  double py(double v) const {
    double c = std::min(std::max(v, ymin), ymax);
    return y0 + h - (c - ymin) / (ymax - ymin) * h;
  }
};

void draw_axes(std::string& svg, const PanelGeom& g, const std::string& title) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "<rect x='%.1f' y='%.1f' width='%.1f' height='%.1f' "
                "fill='none' stroke='#444'/>\n"
                "<text x='%.1f' y='%.1f' font-size='13' fill='#222' "
                "text-anchor='middle'>%s</text>\n",
                g.x0, g.y0, g.w, g.h, g.x0 + g.w / 2, g.y0 - 8, title.c_str());
  svg += buf;
  for (double v : {g.ymin, (g.ymin + g.ymax) / 2, g.ymax}) {
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%.1f' font-size='10' fill='#555' "
                  "text-anchor='end'>%.2g</text>\n",
                  g.x0 - 4, g.py(v) + 3, v);
    svg += buf;
  }
}

void draw_series(std::string& svg, const PanelGeom& g,
                 const std::vector<double>& ys, const std::vector<bool>& ok,
                 const char* color, const char* dash) {
  char buf[256];
  std::string pts;
  for (size_t i = 0; i < ys.size(); ++i) {
    if (!ok[i]) continue;
    std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", g.px(0, i, ys.size()),
                  g.py(ys[i]));
    pts += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<polyline points='%s' fill='none' stroke='%s' "
                "stroke-width='1.5'%s/>\n",
                pts.c_str(), color,
                dash[0] ? (std::string(" stroke-dasharray='") + dash + "'").c_str()
                        : "");
  svg += buf;
  for (size_t i = 0; i < ys.size(); ++i) {
    if (!ok[i]) continue;
    std::snprintf(buf, sizeof(buf),
                  "<circle cx='%.1f' cy='%.1f' r='3' fill='%s'/>\n",
                  g.px(0, i, ys.size()), g.py(ys[i]), color);
    svg += buf;
  }
}

}  // namespace

std::string sweep_svg(const SweepReport& report) {
  std::vector<SweepLegResult> legs = report.legs;
  std::sort(legs.begin(), legs.end(),
            [](const SweepLegResult& a, const SweepLegResult& b) {
              return a.d_model < b.d_model;
            });
  size_t n = legs.size();
  std::string svg =
      "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='320' "
      "viewBox='0 0 640 320'>\n"
      "<rect width='640' height='320' fill='white'/>\n";

  PanelGeom succ{60, 40, 220, 210, 0.0, 1.0};
  PanelGeom r2{380, 40, 220, 210, -1.0, 1.0};
  draw_axes(svg, succ, "mean success");
  draw_axes(svg, r2, "held-out R2");

  std::vector<double> ys_succ, ys_e2n, ys_n2e;
  std::vector<bool> ok;
  for (const SweepLegResult& l : legs) {
    ys_succ.push_back(l.mean_success);
    ys_e2n.push_back(l.r2_ec_to_nl);
    ys_n2e.push_back(l.r2_nl_to_ec);
    ok.push_back(!l.failed);
  }
  draw_series(svg, succ, ys_succ, ok, "#1f77b4", "");
  draw_series(svg, r2, ys_e2n, ok, "#d62728", "");
  draw_series(svg, r2, ys_n2e, ok, "#2ca02c", "5,3");

  char buf[256];
  for (size_t i = 0; i < n; ++i) {
    const char* label = legs[i].size.c_str();
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%.1f' font-size='11' fill='#222' "
                  "text-anchor='middle'>%s</text>\n",
                  succ.px(0, i, n), succ.y0 + succ.h + 16, label);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%.1f' font-size='11' fill='#222' "
                  "text-anchor='middle'>%s</text>\n",
                  r2.px(0, i, n), r2.y0 + r2.h + 16, label);
    svg += buf;
    if (legs[i].failed) {
      std::snprintf(buf, sizeof(buf),
                    "<text x='%.1f' y='%.1f' font-size='10' fill='#d62728' "
                    "text-anchor='middle'>failed</text>\n",
                    succ.px(0, i, n), succ.py(0.0) - 6);
      svg += buf;
    }
  }
  svg +=
      "<text x='390' y='290' font-size='11' fill='#d62728'>ec to nl</text>\n"
      "<text x='460' y='290' font-size='11' fill='#2ca02c'>nl to ec"
      "</text>\n</svg>\n";
  return svg;
}

void write_sweep_svg(const SweepReport& report, const std::string& path) {
  util::atomic_write(path, sweep_svg(report));
}

}  // namespace ec2lab::analysis
