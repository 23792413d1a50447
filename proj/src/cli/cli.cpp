#include "ec2lab/cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ec2lab/analysis/analysis.hpp"
#include "ec2lab/models/checkpoint.hpp"
#include "ec2lab/numerics/rng.hpp"
#include "ec2lab/tok/bpe.hpp"
#include "ec2lab/util/fsio.hpp"
#include "ec2lab/world/world.hpp"

namespace ec2lab::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void fail_at(const std::string& path, const std::string& what) {
  throw ConfigError("config error at " + path + ": " + what);
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Strict section reader: unknown keys and wrong JSON types fail loudly with
// the field path instead of silently running on defaults. Absent keys keep
// their defaults; a null section pointer means the section was omitted.
class Section {
 public:
  Section(const json* j, std::string path, std::vector<const char*> keys)
      : j_(j), path_(std::move(path)) {
    if (!j_) return;
    if (!j_->is_object()) fail_at(path_, "expected an object");
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      bool known = false;
      for (const char* k : keys)
        if (it.key() == k) known = true;
      if (!known) fail_at(path_ + "." + it.key(), "unknown key");
    }
  }

  const json* sub(const char* key) const { return find(key); }

  uint64_t u64(const char* key, uint64_t dflt, uint64_t lo = 0,
               uint64_t hi = std::numeric_limits<uint64_t>::max()) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_number_unsigned())
      fail_at(where(key), "expected a non-negative integer");
    uint64_t v = f->get<uint64_t>();
    if (v < lo || v > hi)
      fail_at(where(key), "out of range [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
    return v;
  }

  size_t sz(const char* key, size_t dflt, uint64_t lo = 0,
            uint64_t hi = std::numeric_limits<uint64_t>::max()) const {
    return static_cast<size_t>(u64(key, dflt, lo, hi));
  }

  double dbl(const char* key, double dflt,
             double lo = -std::numeric_limits<double>::infinity(),
             double hi = std::numeric_limits<double>::infinity()) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_number()) fail_at(where(key), "expected a number");
    double v = f->get<double>();
    if (!(v >= lo && v <= hi))
      fail_at(where(key), "out of range [" + fmt(lo) + ", " + fmt(hi) + "]");
    return v;
  }

  bool flag(const char* key, bool dflt) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_boolean()) fail_at(where(key), "expected true or false");
    return f->get<bool>();
  }

  std::string str(const char* key, std::string dflt) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_string()) fail_at(where(key), "expected a string");
    return f->get<std::string>();
  }

  std::string choice(const char* key, std::string dflt,
                     std::vector<const char*> allowed) const {
    std::string v = str(key, std::move(dflt));
    for (const char* a : allowed)
      if (v == a) return v;
    std::string opts;
    for (const char* a : allowed) opts += (opts.empty() ? "" : ", ") + std::string(a);
    fail_at(where(key), "expected one of: " + opts);
  }

  std::vector<size_t> sz_list(const char* key, std::vector<size_t> dflt,
                              bool allow_empty, uint64_t lo = 0) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_array()) fail_at(where(key), "expected an array");
    if (f->empty() && !allow_empty) fail_at(where(key), "must be non-empty");
    std::vector<size_t> out;
    for (size_t i = 0; i < f->size(); ++i) {
      const json& e = (*f)[i];
      if (!e.is_number_unsigned() || e.get<uint64_t>() < lo)
        fail_at(where(key) + "[" + std::to_string(i) + "]",
                "expected an integer >= " + std::to_string(lo));
      out.push_back(static_cast<size_t>(e.get<uint64_t>()));
    }
    return out;
  }

  std::vector<uint64_t> u64_list(const char* key, std::vector<uint64_t> dflt,
                                 bool allow_empty) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_array()) fail_at(where(key), "expected an array");
    if (f->empty() && !allow_empty) fail_at(where(key), "must be non-empty");
    std::vector<uint64_t> out;
    for (size_t i = 0; i < f->size(); ++i) {
      const json& e = (*f)[i];
      if (!e.is_number_unsigned())
        fail_at(where(key) + "[" + std::to_string(i) + "]",
                "expected a non-negative integer");
      out.push_back(e.get<uint64_t>());
    }
    return out;
  }

  std::vector<std::string> str_list(const char* key,
                                    std::vector<std::string> dflt,
                                    bool allow_empty) const {
    const json* f = find(key);
    if (!f) return dflt;
    if (!f->is_array()) fail_at(where(key), "expected an array");
    if (f->empty() && !allow_empty) fail_at(where(key), "must be non-empty");
    std::vector<std::string> out;
    for (size_t i = 0; i < f->size(); ++i) {
      const json& e = (*f)[i];
      if (!e.is_string())
        fail_at(where(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

 private:
  const json* find(const char* key) const {
    if (!j_) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }
  std::string where(const char* key) const { return path_ + "." + key; }

  const json* j_;
  std::string path_;
};

const std::vector<const char*> kSizeNames = {"base", "mini", "micro", "tiny"};

// Seed derivation: every stage and every inner run gets its own labeled
// stream off the root seed, so stages never share randomness and reruns of
// one stage cannot perturb another.
uint64_t sub_seed(uint64_t root, std::string_view tag) {
  return num::Rng(root).split(tag).seed53();
}
uint64_t sub_seed(uint64_t root, std::string_view tag, uint64_t a, uint64_t b,
                  uint64_t c) {
  return num::Rng(root).split(tag).split(a).split(b).split(c).seed53();
}

void archive_config(const RunConfig& cfg, const std::string& out) {
  util::atomic_write(out + "/config.json", cfg.raw_text.empty()
                                               ? canonical_config_json(cfg)
                                               : cfg.raw_text);
}

void need(const std::string& path, const std::string& what,
          const std::string& producer) {
  if (!util::file_exists(path))
    throw MissingArtifact(what + " not found at " + path + "; run `ec2lab " +
                          producer + "` first");
}

// Module-level validate() reports std::invalid_argument; at the CLI boundary
// those are configuration problems and carry the section path.
template <class F>
void checked(const char* path, F&& f) {
  try {
    std::forward<F>(f)();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config error at ") + path + ": " + e.what());
  }
}

trajlm::PretrainConfig pretrain_cfg_of(const RunConfig& cfg) {
  trajlm::PretrainConfig pc = cfg.pretrain;
  pc.game = cfg.game;
  // Disabling the emergent stream removes the whole emergent-channel signal,
  // the in-the-loop speaking term included.
  if (!pc.use_ec) pc.lambda_game = 0.0;
  return pc;
}

std::vector<world::TaskSpec> resolve_tasks(const RunConfig& cfg) {
  if (cfg.policy_tasks.empty()) return world::TaskSpec::all();
  std::vector<world::TaskSpec> tasks;
  for (const std::string& id : cfg.policy_tasks)
    tasks.push_back(world::TaskSpec::by_id(id));
  return tasks;
}

struct MatrixOut {
  policy::EvalReport report;
  double mean_best = 0.0;
};

// The full evaluation matrix: seeds x tasks x demonstration-set sizes.
// Demonstration sets are nested (the n-demo set is a prefix of the pool), so
// a larger budget differs from a smaller one only by the added episodes.
MatrixOut run_policy_matrix(const RunConfig& cfg,
                            const models::PipelineModel& m,
                            const tok::BpeVocab& vocab,
                            const std::string& variant) {
  policy::PromptMode mode =
      cfg.prompt_mode == "ec" ? policy::PromptMode::Ec : policy::PromptMode::Nl;
  std::vector<world::TaskSpec> tasks = resolve_tasks(cfg);
  size_t pool_n =
      *std::max_element(cfg.demo_sizes.begin(), cfg.demo_sizes.end());

  MatrixOut out;
  double acc = 0.0;
  size_t cnt = 0;
  for (uint64_t s : cfg.policy_seeds)
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
      num::Rng dr = num::Rng(cfg.seed).split("demos").split(s).split(ti);
      std::vector<world::Episode> pool;
      for (size_t i = 0; i < pool_n; ++i)
        pool.push_back(world::generate_episode(tasks[ti], dr.split(i).seed53(),
                                               cfg.noise_std));
      for (size_t n : cfg.demo_sizes) {
        policy::DemoSet ds;
        ds.demos.assign(pool.begin(), pool.begin() + n);
        policy::PolicyHead head(policy::policy_feature_dim(m),
                                sub_seed(cfg.seed, "head", s, ti, n), 0.1);
        policy::TrainPolicyResult res =
            policy::train_policy(m, vocab, head, ds, mode, cfg.policy_train,
                                 sub_seed(cfg.seed, "bc", s, ti, n));
        if (res.diverged)
          throw num::NumericError("behavior cloning diverged on task " +
                                  tasks[ti].id() + ": " + res.failure);
        policy::EvalRow row;
        row.task = tasks[ti].id();
        row.seed = s;
        row.demo_size = n;
        row.prompt_mode = cfg.prompt_mode;
        row.variant = variant;
        row.best_rate = res.best_rate;
        row.best_step = res.best_step;
        for (const policy::EvalPoint& e : res.evals) row.rates.push_back(e.rate);
        out.report.rows.push_back(row);
        acc += res.best_rate;
        ++cnt;
      }
    }
  out.mean_best = cnt ? acc / static_cast<double>(cnt) : 0.0;
  return out;
}

std::vector<world::Episode> load_dataset(const std::string& out) {
  need(out + "/data/episodes.jsonl", "dataset", "gen-data");
  return world::read_jsonl(out + "/data/episodes.jsonl");
}

tok::BpeVocab load_vocab_artifact(const std::string& out) {
  need(out + "/data/vocab.json", "tokenizer vocabulary", "gen-data");
  return tok::load_vocab(out + "/data/vocab.json");
}

models::PipelineModel load_pretrained(const RunConfig& cfg,
                                      const std::string& out) {
  need(out + "/pretrain/model.ckpt", "pre-trained checkpoint", "pretrain");
  models::PipelineModel m(cfg.model, sub_seed(cfg.seed, "model"));
  models::load_checkpoint(m.params, out + "/pretrain/model.ckpt");
  return m;
}

void write_game_log_csv(const game::TrainGameResult& res,
                        const std::string& path) {
  std::string s = "step,loss,accuracy,reversed_accuracy\n";
  for (const game::GameLogRow& r : res.log)
    s += std::to_string(r.step) + "," + fmt(r.loss) + "," + fmt(r.accuracy) +
         "," + fmt(r.reversed_accuracy) + "\n";
  util::atomic_write(path, s);
}

// Mean masked-completion error of one prompt stream over prepared items,
// forward values only. This mirrors the training objective: squared error
// against the detached segment latents, averaged over the batch.
double stream_mean_loss(models::PipelineModel& m,
                        const std::vector<trajlm::PretrainBatchItem>& items,
                        bool ec_stream) {
  double acc = 0.0;
  for (const trajlm::PretrainBatchItem& item : items) {
    num::Tape t;
    num::Var whole = trajlm::encode_trajectory(m, t, item.frames);
    trajlm::Crop crop = trajlm::apply_crop(t, whole, item.crop);
    trajlm::Prompt p =
        ec_stream ? trajlm::Prompt::ec(t.constant(trajlm::message_onehot(
                        item.ec_tokens, m.cfg.ec_vocab)))
                  : trajlm::Prompt::nl(item.nl_ids);
    num::Var pred = trajlm::complete(m, t, p, crop.rem, crop.spec);
    const num::Array& pv = pred.val();
    const num::Array& tv = crop.seg.val();
    double se = 0.0;
    for (size_t i = 0; i < pv.data.size(); ++i) {
      double d = pv.data[i] - tv.data[i];
      se += d * d;
    }
    acc += se / static_cast<double>(pv.data.size());
  }
  return acc / static_cast<double>(items.size());
}

struct SummaryRow {
  std::string metric, group;
  std::string demo;   // empty when not applicable
  double value = 0.0;
  size_t n = 0;       // contributing runs; 0 means not applicable
};

void write_summary_csv(const std::vector<SummaryRow>& rows,
                       const std::string& path) {
  std::string s = "metric,group,demo_size,value,n\n";
  for (const SummaryRow& r : rows)
    s += r.metric + "," + r.group + "," + r.demo + "," + fmt(r.value) + "," +
         (r.n ? std::to_string(r.n) : "") + "\n";
  util::atomic_write(path, s);
}

// Success against demonstration-set size, one line per prompt-mode/variant
// group, categorical x axis.
void write_success_svg(
    const std::vector<size_t>& demo_sizes,
    const std::vector<std::pair<std::string, std::map<size_t, double>>>& series,
    const std::string& path) {
  const double W = 560, H = 320, L = 56, R = 168, T = 24, B = 40;
  const double pw = W - L - R, ph = H - T - B;
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                           "#8c564b", "#e377c2"};
  auto px = [&](size_t i) {
    return demo_sizes.size() < 2
               ? L + pw / 2
               : L + pw * static_cast<double>(i) /
                     static_cast<double>(demo_sizes.size() - 1);
  };
  auto py = [&](double v) { return T + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };

  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns='http://www.w3.org/2000/svg' width='%g' "
                "height='%g' viewBox='0 0 %g %g'>\n",
                W, H, W, H);
  s += buf;
  s += "<rect width='100%' height='100%' fill='white'/>\n";
  std::snprintf(buf, sizeof(buf),
                "<rect x='%g' y='%g' width='%g' height='%g' fill='none' "
                "stroke='#999'/>\n",
                L, T, pw, ph);
  s += buf;
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1='%g' y1='%g' x2='%g' y2='%g' stroke='#ddd'/>\n", L,
                  py(tick), L + pw, py(tick));
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x='%g' y='%g' font-size='11' text-anchor='end' "
                  "fill='#333'>%.2g</text>\n",
                  L - 6, py(tick) + 4, tick);
    s += buf;
  }
  for (size_t i = 0; i < demo_sizes.size(); ++i) {
    std::snprintf(buf, sizeof(buf),
                  "<text x='%g' y='%g' font-size='11' text-anchor='middle' "
                  "fill='#333'>%zu</text>\n",
                  px(i), T + ph + 16, demo_sizes[i]);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x='%g' y='%g' font-size='12' text-anchor='middle' "
                "fill='#333'>demonstrations</text>\n",
                L + pw / 2, H - 8);
  s += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x='%g' y='%g' font-size='12' fill='#333'>success "
                "rate</text>\n",
                8.0, T - 8);
  s += buf;

  for (size_t gi = 0; gi < series.size(); ++gi) {
    const char* color = palette[gi % 6];
    std::string pts;
    for (size_t i = 0; i < demo_sizes.size(); ++i) {
      auto it = series[gi].second.find(demo_sizes[i]);
      if (it == series[gi].second.end()) continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(i), py(it->second));
      pts += buf;
      std::snprintf(buf, sizeof(buf),
                    "<circle cx='%.1f' cy='%.1f' r='3' fill='%s'/>\n", px(i),
                    py(it->second), color);
      s += buf;
    }
    if (!pts.empty()) {
      std::snprintf(buf, sizeof(buf),
                    "<polyline points='%s' fill='none' stroke='%s' "
                    "stroke-width='2'/>\n",
                    pts.c_str(), color);
      s += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<rect x='%g' y='%g' width='10' height='10' fill='%s'/>\n",
                  L + pw + 16, T + 12 + 18.0 * static_cast<double>(gi), color);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x='%g' y='%g' font-size='11' fill='#333'>%s</text>\n",
                  L + pw + 30, T + 21 + 18.0 * static_cast<double>(gi),
                  series[gi].first.c_str());
    s += buf;
  }
  s += "</svg>\n";
  util::atomic_write(path, s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.raw_text = canonical_config_json(cfg);
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail_at("$", std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) fail_at("$", "expected an object");

  RunConfig cfg;
  Section top(&root, "$",
              {"seed", "out", "data", "model", "game", "pretrain", "policy",
               "analysis", "sweep"});
  cfg.seed = top.u64("seed", cfg.seed);
  cfg.out = top.str("out", cfg.out);

  Section data(top.sub("data"), "$.data", {"episodes", "noise_std", "vocab_size"});
  cfg.episodes = data.sz("episodes", cfg.episodes);
  cfg.noise_std = data.dbl("noise_std", cfg.noise_std, 0.0, 1.0);
  cfg.vocab_size =
      static_cast<int>(data.u64("vocab_size", static_cast<uint64_t>(cfg.vocab_size),
                                32, static_cast<uint64_t>(cfg.model.nl_vocab)));

  Section model(top.sub("model"), "$.model",
                {"size", "d_lat", "d_lsn", "share_backbone", "listener"});
  cfg.model.size = model.choice("size", cfg.model.size, kSizeNames);
  cfg.model.d_lat = model.sz("d_lat", cfg.model.d_lat, 4, 256);
  cfg.model.d_lsn = model.sz("d_lsn", cfg.model.d_lsn, 4, 1024);
  cfg.model.share_backbone = model.flag("share_backbone", cfg.model.share_backbone);
  cfg.model.listener_kind =
      model.choice("listener", cfg.model.listener_kind, {"gru", "transformer"});

  Section gm(top.sub("game"), "$.game",
             {"ec_vocab", "msg_len", "K", "tau", "n_irrelevant", "n_reversed",
              "n_shuffled", "batch", "steps", "lr", "eval_every",
              "stop_accuracy", "stop_reversed_accuracy"});
  cfg.model.ec_vocab = gm.sz("ec_vocab", cfg.model.ec_vocab, 2, 65536);
  cfg.model.msg_len = gm.sz("msg_len", cfg.model.msg_len, 1, cfg.model.max_prompt);
  cfg.game.K = gm.sz("K", cfg.game.K, 1, 63);
  cfg.game.tau = gm.dbl("tau", cfg.game.tau, 1e-3, 100.0);
  cfg.game.n_irrelevant = gm.sz("n_irrelevant", cfg.game.n_irrelevant);
  cfg.game.n_reversed = gm.sz("n_reversed", cfg.game.n_reversed);
  cfg.game.n_shuffled = gm.sz("n_shuffled", cfg.game.n_shuffled);
  cfg.game.batch = gm.sz("batch", cfg.game.batch, 1);
  cfg.game.steps = gm.sz("steps", cfg.game.steps, 1);
  cfg.game.lr = gm.dbl("lr", cfg.game.lr, 1e-12, 10.0);
  cfg.game.eval_every = gm.sz("eval_every", cfg.game.eval_every, 1);
  cfg.game.stop_accuracy = gm.dbl("stop_accuracy", cfg.game.stop_accuracy, 0.0, 1.0);
  cfg.game.stop_reversed_accuracy =
      gm.dbl("stop_reversed_accuracy", cfg.game.stop_reversed_accuracy, 0.0, 1.0);

  Section pre(top.sub("pretrain"), "$.pretrain",
              {"steps", "batch", "lr", "lambda_game", "use_ec", "use_nl",
               "holdout_frac", "eval_every", "eval_items", "stop_heldout_ratio"});
  cfg.pretrain.steps = pre.sz("steps", cfg.pretrain.steps, 1);
  cfg.pretrain.batch = pre.sz("batch", cfg.pretrain.batch, 1);
  cfg.pretrain.lr = pre.dbl("lr", cfg.pretrain.lr, 1e-12, 10.0);
  cfg.pretrain.lambda_game =
      pre.dbl("lambda_game", cfg.pretrain.lambda_game, 0.0, 100.0);
  cfg.pretrain.use_ec = pre.flag("use_ec", cfg.pretrain.use_ec);
  cfg.pretrain.use_nl = pre.flag("use_nl", cfg.pretrain.use_nl);
  cfg.pretrain.holdout_frac =
      pre.dbl("holdout_frac", cfg.pretrain.holdout_frac, 0.0, 0.5);
  cfg.pretrain.eval_every = pre.sz("eval_every", cfg.pretrain.eval_every, 1);
  cfg.pretrain.eval_items = pre.sz("eval_items", cfg.pretrain.eval_items, 1);
  cfg.pretrain.stop_heldout_ratio =
      pre.dbl("stop_heldout_ratio", cfg.pretrain.stop_heldout_ratio, 0.0, 0.999);

  Section pol(top.sub("policy"), "$.policy",
              {"steps", "batch", "lr", "eval_every", "eval_rollouts",
               "max_episode_steps", "demo_sizes", "seeds", "tasks",
               "prompt_mode", "variant"});
  cfg.policy_train.steps = pol.sz("steps", cfg.policy_train.steps, 1);
  cfg.policy_train.batch = pol.sz("batch", cfg.policy_train.batch, 2);
  cfg.policy_train.lr = pol.dbl("lr", cfg.policy_train.lr, 1e-12, 10.0);
  cfg.policy_train.eval_every = pol.sz("eval_every", cfg.policy_train.eval_every, 1);
  cfg.policy_train.eval_rollouts =
      pol.sz("eval_rollouts", cfg.policy_train.eval_rollouts, 1);
  cfg.policy_train.max_episode_steps =
      pol.sz("max_episode_steps", cfg.policy_train.max_episode_steps, 1, 64);
  cfg.demo_sizes = pol.sz_list("demo_sizes", cfg.demo_sizes, false, 1);
  cfg.policy_seeds = pol.u64_list("seeds", cfg.policy_seeds, false);
  cfg.policy_tasks = pol.str_list("tasks", cfg.policy_tasks, true);
  for (const std::string& id : cfg.policy_tasks) {
    bool known = false;
    for (const world::TaskSpec& t : world::TaskSpec::all())
      if (t.id() == id) known = true;
    if (!known) fail_at("$.policy.tasks", "unknown task id '" + id + "'");
  }
  cfg.prompt_mode = pol.choice("prompt_mode", cfg.prompt_mode, {"nl", "ec"});
  cfg.variant = pol.choice("variant", cfg.variant, {"pretrained", "random"});

  Section ana(top.sub("analysis"), "$.analysis",
              {"ridge", "eval_frac", "min_support"});
  cfg.ridge = ana.dbl("ridge", cfg.ridge, 0.0, 1e3);
  cfg.eval_frac = ana.dbl("eval_frac", cfg.eval_frac, 0.05, 0.5);
  cfg.min_support = ana.sz("min_support", cfg.min_support, 1);

  Section sw(top.sub("sweep"), "$.sweep", {"sizes"});
  cfg.sweep_sizes = sw.str_list("sizes", cfg.sweep_sizes, false);
  for (const std::string& sname : cfg.sweep_sizes) {
    bool known = false;
    for (const char* k : kSizeNames)
      if (sname == k) known = true;
    if (!known)
      fail_at("$.sweep.sizes", "unknown size '" + sname +
                                   "' (expected base, mini, micro or tiny)");
  }

  cfg.raw_text = text;
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::string text;
  try {
    text = util::read_file(path);
  } catch (const std::exception&) {
    fail_at("$", "cannot read config file " + path);
  }
  return parse_config_text(text);
}

std::string canonical_config_json(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["data"] = {{"episodes", cfg.episodes},
               {"noise_std", cfg.noise_std},
               {"vocab_size", cfg.vocab_size}};
  j["model"] = {{"size", cfg.model.size},
                {"d_lat", cfg.model.d_lat},
                {"d_lsn", cfg.model.d_lsn},
                {"share_backbone", cfg.model.share_backbone},
                {"listener", cfg.model.listener_kind}};
  j["game"] = {{"ec_vocab", cfg.model.ec_vocab},
               {"msg_len", cfg.model.msg_len},
               {"K", cfg.game.K},
               {"tau", cfg.game.tau},
               {"n_irrelevant", cfg.game.n_irrelevant},
               {"n_reversed", cfg.game.n_reversed},
               {"n_shuffled", cfg.game.n_shuffled},
               {"batch", cfg.game.batch},
               {"steps", cfg.game.steps},
               {"lr", cfg.game.lr},
               {"eval_every", cfg.game.eval_every},
               {"stop_accuracy", cfg.game.stop_accuracy},
               {"stop_reversed_accuracy", cfg.game.stop_reversed_accuracy}};
  j["pretrain"] = {{"steps", cfg.pretrain.steps},
                   {"batch", cfg.pretrain.batch},
                   {"lr", cfg.pretrain.lr},
                   {"lambda_game", cfg.pretrain.lambda_game},
                   {"use_ec", cfg.pretrain.use_ec},
                   {"use_nl", cfg.pretrain.use_nl},
                   {"holdout_frac", cfg.pretrain.holdout_frac},
                   {"eval_every", cfg.pretrain.eval_every},
                   {"eval_items", cfg.pretrain.eval_items},
                   {"stop_heldout_ratio", cfg.pretrain.stop_heldout_ratio}};
  j["policy"] = {{"steps", cfg.policy_train.steps},
                 {"batch", cfg.policy_train.batch},
                 {"lr", cfg.policy_train.lr},
                 {"eval_every", cfg.policy_train.eval_every},
                 {"eval_rollouts", cfg.policy_train.eval_rollouts},
                 {"max_episode_steps", cfg.policy_train.max_episode_steps},
                 {"demo_sizes", cfg.demo_sizes},
                 {"seeds", cfg.policy_seeds},
                 {"tasks", cfg.policy_tasks},
                 {"prompt_mode", cfg.prompt_mode},
                 {"variant", cfg.variant}};
  j["analysis"] = {{"ridge", cfg.ridge},
                   {"eval_frac", cfg.eval_frac},
                   {"min_support", cfg.min_support}};
  j["sweep"] = {{"sizes", cfg.sweep_sizes}};
  return j.dump(2) + "\n";
}

std::string resolve_out(const RunConfig& cfg) {
  if (!cfg.out.empty()) return cfg.out;
  const char* env = std::getenv("EC2LAB_OUT");
  if (env && *env) return env;
  return "ec2lab_out";
}

void cmd_gen_data(const RunConfig& cfg) {
  if (cfg.episodes < 1)
    fail_at("$.data.episodes", "must be >= 1 to generate a dataset");
  std::string out = resolve_out(cfg);
  std::vector<world::Episode> dataset = world::generate_corpus(
      sub_seed(cfg.seed, "data"), cfg.episodes, cfg.noise_std);
  std::vector<std::string> texts;
  for (const world::Episode& ep : dataset) {
    texts.push_back(ep.instruction);
    texts.push_back(ep.instruction_alt);
  }
  tok::BpeVocab vocab = tok::train_bpe(texts, cfg.vocab_size);
  world::write_jsonl(out + "/data/episodes.jsonl", dataset);
  tok::save_vocab(vocab, out + "/data/vocab.json");
  archive_config(cfg, out);
}

void cmd_train_game(const RunConfig& cfg) {
  checked("$.model", [&] { cfg.model.validate(); });
  checked("$.game", [&] { cfg.game.validate(); });
  std::string out = resolve_out(cfg);
  std::vector<world::Episode> dataset = load_dataset(out);

  models::PipelineModel m(cfg.model, sub_seed(cfg.seed, "model"));
  game::TrainGameResult res =
      game::train_game(m, cfg.game, dataset, sub_seed(cfg.seed, "train-game"));
  if (res.diverged)
    throw num::NumericError("game training diverged: " + res.failure);

  models::save_checkpoint(m.params, out + "/game/model.ckpt");
  game::write_emergent_jsonl(game::emit_emergent_corpus(m, dataset),
                             out + "/game/corpus.jsonl");
  write_game_log_csv(res, out + "/game/train_log.csv");
  archive_config(cfg, out);
}

void cmd_pretrain(const RunConfig& cfg) {
  checked("$.model", [&] { cfg.model.validate(); });
  trajlm::PretrainConfig pc = pretrain_cfg_of(cfg);
  checked("$.pretrain", [&] { pc.validate(); });

  std::string out = resolve_out(cfg);
  std::vector<world::Episode> dataset = load_dataset(out);
  tok::BpeVocab vocab = load_vocab_artifact(out);

  models::PipelineModel m(cfg.model, sub_seed(cfg.seed, "model"));
  std::vector<std::vector<int>> corpus;
  if (pc.use_ec) {
    need(out + "/game/model.ckpt", "game checkpoint", "train-game");
    need(out + "/game/corpus.jsonl", "emergent corpus", "train-game");
    models::load_checkpoint(m.params, out + "/game/model.ckpt");
    corpus = game::read_emergent_jsonl(out + "/game/corpus.jsonl");
  }

  trajlm::PretrainResult res =
      trajlm::pretrain(m, pc, dataset, corpus, vocab, sub_seed(cfg.seed, "pretrain"));
  if (res.diverged)
    throw num::NumericError("pre-training diverged: " + res.failure);

  models::save_checkpoint(m.params, out + "/pretrain/model.ckpt");
  trajlm::write_pretrain_log_csv(res, out + "/pretrain/train_log.csv");
  archive_config(cfg, out);
}

void cmd_train_policy(const RunConfig& cfg) {
  checked("$.model", [&] { cfg.model.validate(); });
  checked("$.policy", [&] { cfg.policy_train.validate(); });
  std::string out = resolve_out(cfg);
  need(out + "/data/episodes.jsonl", "dataset", "gen-data");
  tok::BpeVocab vocab = load_vocab_artifact(out);

  models::PipelineModel m =
      cfg.variant == "pretrained"
          ? load_pretrained(cfg, out)
          : models::PipelineModel(cfg.model, sub_seed(cfg.seed, "model-random"));

  MatrixOut res = run_policy_matrix(cfg, m, vocab, cfg.variant);
  std::string stem =
      out + "/policy/eval_report_" + cfg.prompt_mode + "_" + cfg.variant;
  policy::write_eval_report_csv(res.report, stem + ".csv");
  policy::write_eval_report_json(res.report, stem + ".json");
  archive_config(cfg, out);
}

void cmd_eval(const RunConfig& cfg) {
  checked("$.model", [&] { cfg.model.validate(); });
  trajlm::PretrainConfig pc = pretrain_cfg_of(cfg);
  checked("$.pretrain", [&] { pc.validate(); });

  std::string out = resolve_out(cfg);
  std::vector<world::Episode> dataset = load_dataset(out);
  tok::BpeVocab vocab = load_vocab_artifact(out);
  models::PipelineModel m = load_pretrained(cfg, out);

  std::vector<std::vector<int>> corpus;
  if (pc.use_ec) {
    need(out + "/game/corpus.jsonl", "emergent corpus", "train-game");
    corpus = game::read_emergent_jsonl(out + "/game/corpus.jsonl");
    if (corpus.size() != dataset.size())
      throw num::NumericError("emergent corpus has " +
                              std::to_string(corpus.size()) + " messages for " +
                              std::to_string(dataset.size()) + " episodes");
  }

  size_t n_hold = static_cast<size_t>(static_cast<double>(dataset.size()) *
                                      pc.holdout_frac);
  if (n_hold == 0)
    fail_at("$.pretrain.holdout_frac", "leaves no held-out episodes to evaluate");
  size_t n_train = dataset.size() - n_hold;

  num::Rng rng = num::Rng(cfg.seed).split("eval");
  std::vector<trajlm::PretrainBatchItem> items;
  for (size_t k = 0; k < pc.eval_items; ++k) {
    size_t idx = n_train + static_cast<size_t>(
                               rng.uniform_int(static_cast<int>(n_hold)));
    trajlm::PretrainBatchItem item;
    item.frames = dataset[idx].frame_features;
    if (pc.use_ec) item.ec_tokens = corpus[idx];
    if (pc.use_nl)
      item.nl_ids = trajlm::encode_prompt_ids(m.cfg, vocab, dataset[idx].instruction);
    item.crop = trajlm::draw_crop(item.frames.rows(), rng);
    items.push_back(std::move(item));
  }

  std::string s = "stream,mean_loss,items\n";
  if (pc.use_ec)
    s += "ec," + fmt(stream_mean_loss(m, items, true)) + "," +
         std::to_string(items.size()) + "\n";
  if (pc.use_nl)
    s += "nl," + fmt(stream_mean_loss(m, items, false)) + "," +
         std::to_string(items.size()) + "\n";
  util::atomic_write(out + "/eval/heldout.csv", s);
  archive_config(cfg, out);
}

void cmd_analyze(const RunConfig& cfg) {
  checked("$.model", [&] { cfg.model.validate(); });
  std::string out = resolve_out(cfg);
  std::vector<world::Episode> dataset = load_dataset(out);
  tok::BpeVocab vocab = load_vocab_artifact(out);
  models::PipelineModel m = load_pretrained(cfg, out);
  need(out + "/game/corpus.jsonl", "emergent corpus", "train-game");
  std::vector<std::vector<int>> corpus =
      game::read_emergent_jsonl(out + "/game/corpus.jsonl");

  std::vector<std::string> instructions;
  for (const world::Episode& ep : dataset) instructions.push_back(ep.instruction);

  analysis::CrossModalResult cm = analysis::cross_modal_r2(
      m, corpus, instructions, vocab, cfg.ridge, cfg.eval_frac);
  analysis::write_r2_csv(cm, out + "/analysis/r2_report.csv");
  analysis::AlignmentTable tbl =
      analysis::token_alignment(corpus, instructions, cfg.min_support);
  analysis::write_alignment_csv(tbl, out + "/analysis/alignment.csv");
  archive_config(cfg, out);
}

void cmd_sweep(const RunConfig& cfg) {
  checked("$.model", [&] { cfg.model.validate(); });
  checked("$.game", [&] { cfg.game.validate(); });
  trajlm::PretrainConfig pc = pretrain_cfg_of(cfg);
  checked("$.pretrain", [&] { pc.validate(); });
  checked("$.policy", [&] { cfg.policy_train.validate(); });
  if (!cfg.pretrain.use_ec || !cfg.pretrain.use_nl)
    fail_at("$.pretrain", "the sweep needs both prompt streams enabled");

  std::string out = resolve_out(cfg);
  std::vector<world::Episode> dataset = load_dataset(out);
  tok::BpeVocab vocab = load_vocab_artifact(out);
  std::vector<std::string> instructions;
  for (const world::Episode& ep : dataset) instructions.push_back(ep.instruction);

  auto leg = [&](const std::string& size) {
    models::ModelConfig mc = cfg.model;
    mc.size = size;
    models::PipelineModel m(mc, sub_seed(cfg.seed, "model"));
    game::TrainGameResult gres =
        game::train_game(m, cfg.game, dataset, sub_seed(cfg.seed, "train-game"));
    if (gres.diverged)
      throw num::NumericError("game training diverged: " + gres.failure);
    std::vector<std::vector<int>> corpus = game::emit_emergent_corpus(m, dataset);
    trajlm::PretrainResult pres = trajlm::pretrain(
        m, pc, dataset, corpus, vocab, sub_seed(cfg.seed, "pretrain"));
    if (pres.diverged)
      throw num::NumericError("pre-training diverged: " + pres.failure);

    analysis::SweepLegResult r;
    r.size = size;
    r.mean_success = run_policy_matrix(cfg, m, vocab, "pretrained").mean_best;
    analysis::CrossModalResult cm = analysis::cross_modal_r2(
        m, corpus, instructions, vocab, cfg.ridge, cfg.eval_frac);
    r.r2_ec_to_nl = cm.ec_to_nl.eval_r2;
    r.r2_nl_to_ec = cm.nl_to_ec.eval_r2;
    return r;
  };

  analysis::SweepReport rep = analysis::model_size_sweep(cfg.sweep_sizes, leg);
  analysis::write_sweep_csv(rep, out + "/sweep/sweep.csv");
  analysis::write_sweep_svg(rep, out + "/sweep/sweep.svg");
  archive_config(cfg, out);
}

void cmd_report(const RunConfig& cfg) {
  std::string out = resolve_out(cfg);
  std::vector<SummaryRow> rows;
  std::vector<std::pair<std::string, std::map<size_t, double>>> series;
  std::vector<size_t> demo_union;

  for (const char* mode : {"ec", "nl"})
    for (const char* variant : {"pretrained", "random"}) {
      std::string path = out + "/policy/eval_report_" + mode + "_" + variant +
                         ".json";
      if (!util::file_exists(path)) continue;
      policy::EvalReport rep = policy::read_eval_report_json(path);
      std::map<size_t, std::pair<double, size_t>> by_demo;
      for (const policy::EvalRow& r : rep.rows) {
        by_demo[r.demo_size].first += r.best_rate;
        by_demo[r.demo_size].second += 1;
      }
      std::string group = std::string(mode) + "/" + variant;
      std::map<size_t, double> line;
      for (const auto& [n, agg] : by_demo) {
        double mean = agg.first / static_cast<double>(agg.second);
        rows.push_back({"success", group, std::to_string(n), mean, agg.second});
        line[n] = mean;
        if (std::find(demo_union.begin(), demo_union.end(), n) ==
            demo_union.end())
          demo_union.push_back(n);
      }
      series.emplace_back(group, std::move(line));
    }
  if (series.empty())
    throw MissingArtifact("no policy evaluation reports under " + out +
                          "/policy; run `ec2lab train-policy` first");
  std::sort(demo_union.begin(), demo_union.end());

  std::string r2_path = out + "/analysis/r2_report.csv";
  if (util::file_exists(r2_path)) {
    std::string text = util::read_file(r2_path);
    size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
      size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      if (header) {
        header = false;
        continue;
      }
      std::vector<std::string> f = split_csv_line(line);
      if (f.size() >= 3)
        rows.push_back({"r2", f[0], "", std::atof(f[2].c_str()), 0});
    }
  }

  std::string sweep_path = out + "/sweep/sweep.csv";
  if (util::file_exists(sweep_path)) {
    std::string text = util::read_file(sweep_path);
    size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
      size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      if (header) {
        header = false;
        continue;
      }
      std::vector<std::string> f = split_csv_line(line);
      if (f.size() >= 9 && f[7] == "0")
        rows.push_back({"sweep_success", f[0], "", std::atof(f[4].c_str()), 0});
    }
  }

  write_summary_csv(rows, out + "/report/summary.csv");
  write_success_svg(demo_union, series, out + "/report/success_vs_demos.svg");
  archive_config(cfg, out);
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"emergent-communication pipeline lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir, prompt_mode, variant;
  uint64_t seed = 0;
  bool no_ec = false, no_nl = false;
  bool seed_given = false;

  struct SubSpec {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
    bool stream_flags, policy_flags;
  };
  const std::vector<SubSpec> subs = {
      {"gen-data", "generate the scripted-expert dataset and tokenizer", cmd_gen_data, false, false},
      {"train-game", "train speaker and listener on the referential game", cmd_train_game, false, false},
      {"pretrain", "masked trajectory completion over both prompt streams", cmd_pretrain, true, false},
      {"train-policy", "few-shot behavior cloning on the frozen backbone", cmd_train_policy, false, true},
      {"eval", "held-out completion losses for the pre-trained checkpoint", cmd_eval, true, false},
      {"analyze", "cross-modal regressions and token alignment", cmd_analyze, false, false},
      {"sweep", "full pipeline at each model size", cmd_sweep, false, false},
      {"report", "aggregate run artifacts into summary table and plots", cmd_report, false, false},
  };

  for (const SubSpec& ss : subs) {
    CLI::App* sc = app.add_subcommand(ss.name, ss.help);
    sc->add_option("--config", config_path, "JSON run configuration");
    sc->add_option("--seed", seed, "root seed (overrides the config)")
        ->check(CLI::NonNegativeNumber);
    sc->add_option("--out", out_dir, "output directory");
    if (ss.stream_flags) {
      sc->add_flag("--no-ec", no_ec, "disable the emergent prompt stream");
      sc->add_flag("--no-nl", no_nl, "disable the language prompt stream");
    }
    if (ss.policy_flags) {
      sc->add_option("--prompt-mode", prompt_mode, "nl or ec")
          ->check(CLI::IsMember({"nl", "ec"}));
      sc->add_option("--variant", variant, "pretrained or random backbone")
          ->check(CLI::IsMember({"pretrained", "random"}));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* picked = app.get_subcommands().front();
  seed_given = picked->count("--seed") > 0;

  try {
    RunConfig cfg =
        config_path.empty() ? default_config() : load_config_file(config_path);
    if (seed_given) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (no_ec) cfg.pretrain.use_ec = false;
    if (no_nl) cfg.pretrain.use_nl = false;
    if (!prompt_mode.empty()) cfg.prompt_mode = prompt_mode;
    if (!variant.empty()) cfg.variant = variant;

    for (const SubSpec& ss : subs)
      if (picked->get_name() == ss.name) {
        ss.fn(cfg);
        return 0;
      }
    std::fprintf(stderr, "ec2lab: unknown subcommand\n");
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "ec2lab: %s\n", e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "ec2lab: %s\n", e.what());
    return 3;
  } catch (const num::NumericError& e) {
    std::fprintf(stderr, "ec2lab: numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ec2lab: %s\n", e.what());
    return 4;
  }
}

}  // namespace ec2lab::cli
