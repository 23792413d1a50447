#pragma once

#include <functional>

#include "ec2lab/numerics/param.hpp"
#include "ec2lab/numerics/tape.hpp"

namespace ec2lab::num {

// Compares the tape gradient of a scalar function against central finite
// differences. f receives a fresh tape and a leaf for x; the same closure is
// reused for the perturbed value-only evaluations, so it must be deterministic
// (reconstruct any Rng inside). Returns the max over coordinates of
//   |analytic - central_diff| / max(1e-8, |central_diff|).
double finite_difference_check(const std::function<Var(Tape&, Var)>& f,
                               const Array& x, double eps);

// Same check, but sweeping the coordinates of every parameter in `params`.
// loss_fn(true) must build a graph over the parameters' current values, run
// backward, and return the loss; loss_fn(false) only needs the loss value.
// Gradients are zeroed here before the analytic pass. When
// max_coords_per_param > 0, a deterministic stride subsamples large tensors.
double finite_difference_check_params(const std::vector<Parameter*>& params,
                                      const std::function<double(bool)>& loss_fn,
                                      double eps,
                                      size_t max_coords_per_param = 0);

}  // namespace ec2lab::num
