#include "ec2lab/numerics/fd.hpp"

#include <cmath>
#include <stdexcept>

namespace ec2lab::num {

static double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
}

double finite_difference_check(const std::function<Var(Tape&, Var)>& f,
                               const Array& x, double eps) {
  if (eps <= 0.0)
    throw std::invalid_argument("finite_difference_check: eps must be > 0");
  Parameter px("fd.x", x);
  {
    Tape tape;
    Var loss = f(tape, tape.leaf(&px));
    tape.backward(loss);
  }
  Array analytic = px.grad;
  double worst = 0.0;
  Array xp = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    double orig = xp.data[i];
    auto eval = [&](double v) {
      xp.data[i] = v;
      Tape tape;
      Var loss = f(tape, tape.constant(xp));
      return loss.val().data[0];
    };
    double lp = eval(orig + eps);
    double lm = eval(orig - eps);
    xp.data[i] = orig;
    double cd = (lp - lm) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic.data[i], cd));
  }
  return worst;
}

double finite_difference_check_params(const std::vector<Parameter*>& params,
                                      const std::function<double(bool)>& loss_fn,
                                      double eps, size_t max_coords_per_param) {
  if (eps <= 0.0)
    throw std::invalid_argument("finite_difference_check_params: eps must be > 0");
  for (Parameter* p : params) p->zero_grad();
  loss_fn(true);
  double worst = 0.0;
  for (Parameter* p : params) {
    size_t n = p->value.numel();
    size_t stride = 1;
    if (max_coords_per_param > 0 && n > max_coords_per_param)
      stride = n / max_coords_per_param;
    for (size_t i = 0; i < n; i += stride) {
      double orig = p->value.data[i];
      p->value.data[i] = orig + eps;
      double lp = loss_fn(false);
      p->value.data[i] = orig - eps;
      double lm = loss_fn(false);
      p->value.data[i] = orig;
      double cd = (lp - lm) / (2.0 * eps);
      worst = std::max(worst, rel_err(p->grad.data[i], cd));
    }
  }
  return worst;
}

}  // namespace ec2lab::num
