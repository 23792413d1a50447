#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ec2lab/models/model.hpp"
#include "ec2lab/tok/bpe.hpp"

namespace ec2lab::analysis {

// Linear probes between the emergent and natural-language embedding spaces,
// token/word pointwise mutual information, and the model-size sweep report.

// Multi-output coefficient of determination: 1 - SS_res/SS_tot per column,
// averaged over columns. Throws when any y_true column is constant (SS_tot
// would be zero) or shapes differ. Can be negative for bad predictors.
double r_squared(const num::Array& y_true, const num::Array& y_pred);

struct RegressionFit {
  num::Array W;  // {p, q}
  num::Array b;  // {q}
  double train_r2 = 0.0;
  double eval_r2 = 0.0;  // NaN until a held-out split evaluated it
};

// Centered ridge least squares, closed form; the bias is not penalized.
RegressionFit fit_linear(const num::Array& X, const num::Array& Y,
                         double ridge = 1e-6);

num::Array predict(const RegressionFit& fit, const num::Array& X);

// Fits on the leading (1 - eval_frac) rows and fills eval_r2 from the rest.
RegressionFit fit_linear_split(const num::Array& X, const num::Array& Y,
                               double ridge = 1e-6, double eval_frac = 0.2);

// Episode-level pooled embeddings: an emergent message is the mean of its
// prompt-encoder outputs, an instruction the mean of its token embeddings.
num::Array ec_embedding(const models::PipelineModel& m,
                        const std::vector<int>& tokens);
num::Array nl_embedding(const models::PipelineModel& m,
                        const tok::BpeVocab& vocab,
                        const std::string& instruction);

struct CrossModalResult {
  RegressionFit ec_to_nl;
  RegressionFit nl_to_ec;
  size_t n_train = 0;
  size_t n_eval = 0;
};

// Both regression directions between per-episode pooled embeddings, held-out
// R2 from the trailing eval_frac of episodes. Corpora must be aligned.
CrossModalResult cross_modal_r2(const models::PipelineModel& m,
                                const std::vector<std::vector<int>>& ec_corpus,
                                const std::vector<std::string>& instructions,
                                const tok::BpeVocab& vocab,
                                double ridge = 1e-6, double eval_frac = 0.2);

void write_r2_csv(const CrossModalResult& res, const std::string& path);

struct AlignmentRow {
  int token = 0;
  std::string word;
  double pmi = 0.0;
  size_t count = 0;  // episodes containing both
};

struct AlignmentTable {
  std::vector<AlignmentRow> rows;  // PMI descending, then token, then word
};

// Episode-level PMI over distinct-token / distinct-word presence:
// log [ p(token, word) / (p(token) p(word)) ]. Rows below min_support joint
// episodes are dropped; min_support >= 1.
AlignmentTable token_alignment(const std::vector<std::vector<int>>& ec_corpus,
                               const std::vector<std::string>& instructions,
                               size_t min_support);

void write_alignment_csv(const AlignmentTable& table, const std::string& path);

struct SweepLegResult {
  std::string size;
  size_t n_layer = 0, n_head = 0, d_model = 0;
  double mean_success = 0.0;
  double r2_ec_to_nl = 0.0;
  double r2_nl_to_ec = 0.0;
  bool failed = false;
  std::string failure;
};

struct SweepReport {
  std::vector<SweepLegResult> legs;
};

using SweepLegFn = std::function<SweepLegResult(const std::string& size)>;

// Runs one leg per size name via run_leg and stamps the preset widths from
// the model configuration. A throwing leg yields a failed row with the
// message preserved, never a lost report.
SweepReport model_size_sweep(const std::vector<std::string>& sizes,
                             const SweepLegFn& run_leg);

void write_sweep_csv(const SweepReport& report, const std::string& path);

// Standalone two-panel SVG: success per size and both R2 directions per
// size, ordered by model width.
std::string sweep_svg(const SweepReport& report);
void write_sweep_svg(const SweepReport& report, const std::string& path);

}  // namespace ec2lab::analysis
