#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ec2lab/numerics/array.hpp"

namespace ec2lab::num {

// A named trainable tensor. Gradient buffer always matches value's shape and
// is accumulated into by Tape::backward.
struct Parameter {
  std::string name;
  Array value;
  Array grad;

  Parameter(std::string n, Array v)
      : name(std::move(n)), value(std::move(v)), grad(Array::zeros(value.shape)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Owns parameters and hands out stable pointers. Names must be unique; the
// map keeps them sorted, which fixes the serialization order.
class ParamStore {
 public:
  Parameter* add(const std::string& name, Array value);
  Parameter* get(const std::string& name);
  const Parameter* get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  // Sorted by name.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  // Parameters whose name starts with the given prefix, sorted.
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  void zero_grad();
  size_t total_numel() const;

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Adam moment buffers, lazily sized per parameter on first step.
struct AdamState {
  std::map<std::string, Array> m;
  std::map<std::string, Array> v;
  long t = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update over the given parameters using their accumulated grads.
// Does not clear gradients; call ParamStore::zero_grad before the next pass.
void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const AdamConfig& cfg);

// ---- init helpers ----
// Weights: uniform in +-sqrt(1/fan_in). Biases: zero. Embeddings: N(0, 0.02).
Array init_linear_weight(size_t fan_in, size_t fan_out, Rng& rng);
Array init_embedding(size_t vocab, size_t dim, Rng& rng, double stddev = 0.02);

}  // namespace ec2lab::num
