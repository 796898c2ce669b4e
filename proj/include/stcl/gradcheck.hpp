#pragma once

#include <functional>
#include <vector>

#include "stcl/tensor.hpp"

namespace stcl {

// Central-difference check of reverse-mode gradients. `f` rebuilds the scalar
// loss on the given tape from current tensor contents; `wrt` are the tensors
// whose gradients are verified. Returns the max relative error
// |analytic - numeric| / max(1, |analytic|, |numeric|) over all coordinates.
inline double grad_check(const std::function<Tensor(Tape&)>& f,
                         const std::vector<Tensor>& wrt, double h = 1e-5) {
  for (auto t : wrt) {
    t.mutable_grad();
    t.zero_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);

  double max_err = 0.0;
  for (auto t : wrt) {
    std::vector<double> analytic = t.grad();
    auto& x = t.mutable_data();
    for (size_t i = 0; i < x.size(); ++i) {
      double orig = x[i];
      x[i] = orig + h;
      Tape tp;
      double lp = f(tp).value();
      x[i] = orig - h;
      Tape tm;
      double lm = f(tm).value();
      x[i] = orig;
      double numeric = (lp - lm) / (2.0 * h);
      double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace stcl
