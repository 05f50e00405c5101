#include "anymodal/gradcheck.hpp"

#include <cmath>

namespace am::nn {

GradCheckReport grad_check(const std::function<TensorD()>& loss_fn,
                           const std::vector<TensorD*>& leaves, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3))
    op_error("grad_check", "eps must be in [1e-6, 1e-3], got " + std::to_string(eps));
  if (leaves.empty()) op_error("grad_check", "no leaves to check");

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    for (TensorD* leaf : leaves) {
      leaf->ensure_grad();
      leaf->zero_grad();
    }
    TapeD tape;
    TensorD loss = loss_fn();
    if (loss.size() != 1)
      op_error("grad_check", "loss must be scalar, got shape " + shape_str(loss.shape));
    tape.backward(loss);
    for (TensorD* leaf : leaves) analytic.push_back(*leaf->grad);
  }

  // Numeric pass.
  GradCheckReport report;
  NoGrad ng;
  for (size_t li = 0; li < leaves.size(); ++li) {
    TensorD* leaf = leaves[li];
    double* p = leaf->ptr();
    for (int64_t i = 0; i < leaf->size(); ++i) {
      double saved = p[i];
      p[i] = saved + eps;
      double lp = (*loss_fn().data)[0];
      p[i] = saved - eps;
      double lm = (*loss_fn().data)[0];
      p[i] = saved;
      double numeric = (lp - lm) / (2.0 * eps);
      double a = analytic[li][static_cast<size_t>(i)];
      double rel = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-12);
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      ++report.coords;
    }
  }
  return report;
}

}  // namespace am::nn
