#include "prismer/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "prismer/error.hpp"

namespace prismer {

std::vector<double> PcaProjection::project(std::span<const double> v) const {
  if (v.size() != input_dim) {
    throw DimensionError("pca_project: vector of dimension " + std::to_string(v.size()) + ", expected " +
                         std::to_string(input_dim));
  }
  std::vector<double> out(output_dim, 0.0);
  for (std::size_t i = 0; i < input_dim; ++i) {
    const double centred = v[i] - mean[i];
    for (std::size_t j = 0; j < output_dim; ++j) out[j] += component(i, j) * centred;
  }
  return out;
}

std::vector<double> PcaProjection::reconstruct(std::span<const double> y) const {
  if (y.size() != output_dim) throw DimensionError("pca_reconstruct: dimension mismatch");
  std::vector<double> out(mean);
  for (std::size_t i = 0; i < input_dim; ++i)
    for (std::size_t j = 0; j < output_dim; ++j) out[i] += component(i, j) * y[j];
  return out;
}

PcaProjection pca_fit(std::span<const std::vector<double>> samples, std::size_t dims) {
  if (samples.size() < 2) throw FitError("pca_fit: need at least 2 samples, got " + std::to_string(samples.size()));
  const auto dim = samples.front().size();
  if (dim == 0) throw FitError("pca_fit: empty sample vectors");
  if (dims == 0 || dims > dim) {
    throw DimensionError("pca_fit: cannot keep " + std::to_string(dims) + " components of " + std::to_string(dim) +
                         "-dimensional data");
  }
  const auto n = samples.size();
  Eigen::MatrixXd data(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    if (samples[r].size() != dim) throw DimensionError("pca_fit: ragged samples");
    for (std::size_t c = 0; c < dim; ++c) data(r, c) = samples[r][c];
  }
  const Eigen::VectorXd mu = data.colwise().mean();
  data.rowwise() -= mu.transpose();
  const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n - 1);

  // Eigen returns ascending eigenvalues with a full orthonormal eigenbasis,
  // which doubles as the completion for rank-deficient data.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw FitError("pca_fit: eigendecomposition failed");
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  const double top = std::max(values(static_cast<Eigen::Index>(dim - 1)), 0.0);

  PcaProjection p;
  p.input_dim = dim;
  p.output_dim = dims;
  p.mean.assign(mu.data(), mu.data() + dim);
  p.components.assign(dim * dims, 0.0);
  p.explained_variance.resize(dims);
  for (std::size_t j = 0; j < dims; ++j) {
    const auto src = static_cast<Eigen::Index>(dim - 1 - j);
    double var = values(src);
    if (var < 1e-12 * std::max(top, 1.0)) var = 0.0;
    p.explained_variance[j] = var;
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    vectors.col(src).cwiseAbs().maxCoeff(&arg);
    const double sign = vectors(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < dim; ++i) p.components[i * dims + j] = sign * vectors(static_cast<Eigen::Index>(i), src);
  }
  return p;
}

}  // namespace prismer
