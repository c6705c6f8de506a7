#pragma once

#include "ndp/params.hpp"

#include <vector>

namespace ndp {

struct RmsPropConfig {
  double learning_rate = 1e-3;
  double alpha = 0.99;
  double epsilon = 1e-8;
};

/// RMSprop: s <- alpha s + (1 - alpha) g^2;  p <- p - lr g / (sqrt(s) + eps).
class RmsProp {
 public:
  explicit RmsProp(const ParamStore& params, RmsPropConfig config = {});

  /// Applies one update from the gradients held in `params`. A non-finite
  /// gradient throws DivergenceError naming the parameter, and nothing is
  /// modified.
  void step(ParamStore& params);

  const RmsPropConfig& config() const { return config_; }
  const Mat& square_avg(std::size_t id) const { return square_avg_.at(id); }
  long steps() const { return steps_; }

 private:
  RmsPropConfig config_;
  std::vector<Mat> square_avg_;
  long steps_ = 0;
};

}  // namespace ndp
