#include "ndp/nn.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ndp {

Var LinearLayer::forward(Tape& tape, const Var& x) const {
  if (x.cols() != in) {
    throw ShapeError("linear layer expects width " + std::to_string(in) + ", got " +
                     std::to_string(x.cols()));
  }
  return linear(x, tape.param(weight), tape.param(bias));
}

LinearLayer make_linear(ParamStore& store, const std::string& prefix, Eigen::Index in,
                        Eigen::Index out, std::mt19937_64& rng) {
  LinearLayer layer;
  layer.in = in;
  layer.out = out;
  layer.weight = store.add(prefix + ".weight", fan_in_uniform(in, out, in, rng));
  layer.bias = store.add(prefix + ".bias", Mat::Zero(1, out));
  return layer;
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, std::vector<Eigen::Index> widths,
         Activation hidden, Activation output, std::mt19937_64& rng)
    : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.push_back(
        make_linear(store, prefix + "." + std::to_string(i), widths_[i], widths_[i + 1], rng));
    activations_.push_back(i + 2 == widths_.size() ? output : hidden);
  }
}

Var Mlp::forward(Tape& tape, const Var& x) const {
  if (x.cols() != input_width()) {
    throw ShapeError("MLP input width " + std::to_string(input_width()) + ", got " +
                     std::to_string(x.cols()));
  }
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = activate(layers_[i].forward(tape, h), activations_[i]);
  }
  return h;
}

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::Relu:
      return relu(x);
    case Activation::Tanh:
      return tanh(x);
    case Activation::Identity:
      break;
  }
  return x;
}

namespace {

// Saturated sigmoids round to exactly 0.1 or 1.0 in double precision; the
// range is kept open by stopping one ulp inside each end.
const double kSigmaLo = std::nextafter(0.1, 1.0);
const double kSigmaHi = std::nextafter(1.0, 0.0);

}  // namespace

Var bounded_sigma(const Var& pre_activation) {
  return clamp(add_scalar(0.9 * sigmoid(pre_activation), 0.1), kSigmaLo, kSigmaHi);
}

double bounded_sigma(double pre_activation) {
  const double s = 0.1 + 0.9 * (1.0 / (1.0 + std::exp(-pre_activation)));
  return std::clamp(s, kSigmaLo, kSigmaHi);
}

Var sigma_head(Tape& tape, const LinearLayer& head, const Var& h) {
  return bounded_sigma(head.forward(tape, h));
}

}  // namespace ndp
