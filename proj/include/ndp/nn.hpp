#pragma once

#include "ndp/params.hpp"
#include "ndp/tape.hpp"

#include <random>
#include <string>
#include <vector>

namespace ndp {

enum class Activation { Identity, Relu, Tanh };

/// y = x W + b with W stored as (in x out).
struct LinearLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  Var forward(Tape& tape, const Var& x) const;
};

/// Registers `<prefix>.weight` / `<prefix>.bias`: fan-in uniform weights, zero bias.
LinearLayer make_linear(ParamStore& store, const std::string& prefix, Eigen::Index in,
                        Eigen::Index out, std::mt19937_64& rng);

/// Feed-forward network. `widths` lists input, hidden..., output; hidden
/// layers use `hidden` and the last layer uses `output`.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, std::vector<Eigen::Index> widths,
      Activation hidden, Activation output, std::mt19937_64& rng);

  Var forward(Tape& tape, const Var& x) const;

  Eigen::Index input_width() const { return widths_.front(); }
  Eigen::Index output_width() const { return widths_.back(); }
  const std::vector<Eigen::Index>& widths() const { return widths_; }
  const std::vector<LinearLayer>& layers() const { return layers_; }
  const std::vector<Activation>& activations() const { return activations_; }

 private:
  std::vector<Eigen::Index> widths_;
  std::vector<LinearLayer> layers_;
  std::vector<Activation> activations_;
};

Var activate(const Var& x, Activation a);

/// 0.1 + 0.9 * sigmoid(x): standard deviations confined to (0.1, 1).
Var bounded_sigma(const Var& pre_activation);
double bounded_sigma(double pre_activation);

/// bounded_sigma applied to a linear head.
Var sigma_head(Tape& tape, const LinearLayer& head, const Var& h);

}  // namespace ndp
