#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "prismer/tensor.hpp"

namespace prismer {

struct GradCheckOptions {
  double step = 1e-4;
  double floor = 1e-6;
  std::size_t coordinates_per_tensor = 20;
  std::uint64_t seed = 7;
};

// Max over sampled coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, floor)
// where numeric is the fourth-order central difference. Gradients below
// `floor` sit at the difference quotient's rounding noise and are compared
// on that absolute scale.
// `build` must rebuild the graph from the current parameter values and return
// a single-element tensor; parameters must have requires_grad set.
double grad_check(const std::function<Tensor()>& build, std::span<Tensor> parameters,
                  const GradCheckOptions& options = {});

}  // namespace prismer
