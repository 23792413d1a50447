#include "ec2lab/numerics/param.hpp"

#include <cmath>
#include <stdexcept>

namespace ec2lab::num {

Parameter* ParamStore::add(const std::string& name, Array value) {
  if (params_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  auto p = std::make_unique<Parameter>(name, std::move(value));
  Parameter* raw = p.get();
  params_.emplace(name, std::move(p));
  return raw;
}

Parameter* ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second.get();
}

const Parameter* ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second.get();
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [k, v] : params_) out.push_back(v.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(v.get());
  return out;
}

std::vector<Parameter*> ParamStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto it = params_.lower_bound(prefix); it != params_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->second.get());
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [k, v] : params_) v->zero_grad();
}

size_t ParamStore::total_numel() const {
  size_t n = 0;
  for (const auto& [k, v] : params_) n += v->value.numel();
  return n;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const AdamConfig& cfg) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (Parameter* p : params) {
    Array& m = state.m.try_emplace(p->name, Array::zeros(p->value.shape)).first->second;
    Array& v = state.v.try_emplace(p->name, Array::zeros(p->value.shape)).first->second;
    if (!m.same_shape(p->value))
      throw std::invalid_argument("adam_step: stale moment shape for " + p->name);
    if (!p->grad.all_finite())
      throw NumericError("adam_step: non-finite gradient in " + p->name);
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      double g = p->grad.data[i];
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p->value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Array init_linear_weight(size_t fan_in, size_t fan_out, Rng& rng) {
  double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Array::rand_uniform({fan_in, fan_out}, rng, bound);
}

Array init_embedding(size_t vocab, size_t dim, Rng& rng, double stddev) {
  return Array::randn({vocab, dim}, rng, stddev);
}

}  // namespace ec2lab::num
