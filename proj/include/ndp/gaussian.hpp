#pragma once

#include "ndp/tape.hpp"

namespace ndp {

/// Diagonal Gaussian: mean and per-dimension standard deviation.
struct DiagGaussian {
  Vec mu;
  Vec sigma;

  Eigen::Index dim() const { return mu.size(); }
  /// Throws ShapeError on length mismatch and DomainError on a non-positive
  /// or non-finite entry.
  void validate() const;
};

/// mu + sigma * noise.
Vec reparam_sample(const DiagGaussian& q, const Vec& noise);

/// Row-batched form: every argument is N x k.
Var reparam_sample(const Var& mu, const Var& sigma, const Mat& noise);

}  // namespace ndp
