#include "prismer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prismer/error.hpp"
#include "prismer/rng.hpp"

namespace prismer {

namespace {

double evaluate(const std::function<Tensor()>& build) {
  const auto out = build();
  if (out.numel() != 1) throw ContractError("grad_check: output is not scalar, shape " + shape_to_string(out.shape()));
  return out.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& build, std::span<Tensor> parameters,
                  const GradCheckOptions& options) {
  for (auto& p : parameters) p.zero_grad();
  const auto out = build();
  if (out.numel() != 1) throw ContractError("grad_check: output is not scalar, shape " + shape_to_string(out.shape()));
  out.backward();

  Rng rng(options.seed);
  double worst = 0.0;
  for (auto& p : parameters) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.coordinates_per_tensor) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < options.coordinates_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.coordinates_per_tensor);
    }

    auto values = p.mutable_data();
    for (auto c : coords) {
      const double saved = values[c];
      const auto at = [&](double offset) {
        values[c] = saved + offset;
        return evaluate(build);
      };
      const double h = options.step;
      const double near = at(h) - at(-h);
      const double far = at(2.0 * h) - at(-2.0 * h);
      values[c] = saved;
      const double numeric = (8.0 * near - far) / (12.0 * h);
      const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(analytic[c] - numeric) / denom);
    }
  }
  for (auto& p : parameters) p.zero_grad();
  return worst;
}

}  // namespace prismer
