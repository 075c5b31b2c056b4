#pragma once

#include <span>
#include <vector>

namespace prismer {

// Linear projection onto the leading principal directions of a sample set.
struct PcaProjection {
  std::vector<double> mean;                // [input_dim]
  std::vector<double> components;          // [input_dim x output_dim], column j = j-th direction
  std::vector<double> explained_variance;  // [output_dim], non-increasing
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;

  double component(std::size_t row, std::size_t col) const { return components[row * output_dim + col]; }

  // components^T (v - mean)
  std::vector<double> project(std::span<const double> v) const;
  // mean + components * y
  std::vector<double> reconstruct(std::span<const double> y) const;
};

// Mean-centred top-`dims` eigenvectors of the sample covariance (n - 1
// denominator), sorted by variance. Directions beyond the data rank come from
// an orthonormal completion and carry zero variance. Throws FitError with
// fewer than two samples.
PcaProjection pca_fit(std::span<const std::vector<double>> samples, std::size_t dims);

}  // namespace prismer
