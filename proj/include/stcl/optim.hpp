#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stcl/tensor.hpp"

namespace stcl {

// Named map of learnable tensors; iteration order is the sorted name order,
// which keeps parameter traversal deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    auto [it, inserted] = params_.emplace(name, std::move(t));
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    return it->second;
  }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  size_t total_count() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  long step_count = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// Noam schedule: d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
inline double noam_lr(long step, int d_model, long warmup) {
  if (step < 1) throw ConfigError("noam_lr: step must be >= 1");
  if (warmup < 1) throw ConfigError("noam_lr: warmup must be >= 1");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// Bias-corrected Adam update over every parameter's accumulated grad.
inline void adam_step(ParamStore& params, AdamState& state, double lr) {
  ++state.step_count;
  double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
  double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    p.mutable_grad();  // zero-filled if the parameter never saw a backward pass
    const auto& g = p.grad();
    auto& w = p.mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericalError("adam_step: non-finite gradient in parameter " + name);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace stcl
