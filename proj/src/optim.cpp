#include "ndp/optim.hpp"

#include "ndp/errors.hpp"

namespace ndp {

RmsProp::RmsProp(const ParamStore& params, RmsPropConfig config) : config_(config) {
  square_avg_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    square_avg_.push_back(Mat::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void RmsProp::step(ParamStore& params) {
  if (params.size() != square_avg_.size()) throw ShapeError("optimizer state/parameter mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.grad(i).allFinite()) {
      throw DivergenceError("non-finite gradient for parameter " + params.name(i) +
                            " at optimizer step " + std::to_string(steps_));
    }
  }
  const double a = config_.alpha;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = params.grad(i);
    Mat& s = square_avg_[i];
    s = a * s + (1.0 - a) * g.cwiseProduct(g);
    params.value(i).array() -=
        config_.learning_rate * g.array() / (s.array().sqrt() + config_.epsilon);
  }
  ++steps_;
}

}  // namespace ndp
