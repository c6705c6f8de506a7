#include "ndp/gaussian.hpp"

#include "ndp/errors.hpp"

#include <cmath>

namespace ndp {

void DiagGaussian::validate() const {
  if (mu.size() != sigma.size()) throw ShapeError("DiagGaussian: mu and sigma lengths differ");
  if (!mu.allFinite()) throw DomainError("DiagGaussian: non-finite mean");
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i])) {
      throw DomainError("DiagGaussian: sigma must be positive and finite");
    }
  }
}

Vec reparam_sample(const DiagGaussian& q, const Vec& noise) {
  if (noise.size() != q.mu.size() || q.sigma.size() != q.mu.size()) {
    throw ShapeError("reparam_sample: noise length does not match the distribution");
  }
  return q.mu + q.sigma.cwiseProduct(noise);
}

Var reparam_sample(const Var& mu, const Var& sigma, const Mat& noise) {
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw ShapeError("reparam_sample: noise shape does not match the distribution");
  }
  return mu + sigma * constant(noise);
}

}  // namespace ndp
