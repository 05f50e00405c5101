#pragma once

// Central-difference gradient checking, always in double. The loss function
// must be a pure function of the leaf tensor values; it is re-evaluated twice
// per coordinate for the numeric side and once under a tape for the analytic
// side. Relative error per coordinate is
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12).

#include <functional>

#include "anymodal/tensor.hpp"

namespace am::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t coords = 0;
};

// eps must lie in [1e-6, 1e-3]; anything else throws.
GradCheckReport grad_check(const std::function<TensorD()>& loss_fn,
                           const std::vector<TensorD*>& leaves, double eps);

}  // namespace am::nn
