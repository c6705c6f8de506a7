#pragma once

// Reverse-mode differentiation over row-major matrices.
//
// Every value is a matrix whose rows are independent batch items. All
// forward kernels are row-independent: the bits of output row n depend only
// on input row n, never on the number or content of the other rows. Batched
// and single-row evaluations therefore agree exactly, which the
// exchangeability and consistency guarantees of the model rely on.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ndp {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

class ParamStore;
class Tape;

namespace detail {

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  Mat& grad_buffer() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

/// Handle to a value on a tape (or a free constant).
class Var {
 public:
  Var() = default;

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Value of a 1x1 variable.
  double item() const;
  /// Accumulated gradient after Tape::backward; zeros if none reached it.
  Mat grad() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  friend Var make_var(Mat value, std::shared_ptr<detail::Node> node, Tape* tape);
  std::shared_ptr<detail::Node> node_;
  Tape* tape_ = nullptr;
};

/// Wraps a node (or, when `node` is null, a fresh constant holding `value`).
Var make_var(Mat value, std::shared_ptr<detail::Node> node, Tape* tape);

/// Records operations for one forward/backward pass.
///
/// A tape bound to a mutable ParamStore accumulates parameter gradients into
/// that store on backward(). A tape built with `inference()` records nothing,
/// so intermediate values are released as soon as they go out of scope.
class Tape {
 public:
  Tape();
  explicit Tape(ParamStore& params);
  static Tape inference(const ParamStore& params);
  static Tape inference();

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  /// Parameter as a variable; the same Var is returned for repeated calls.
  Var param(std::size_t id);
  Var param(std::string_view name);

  /// Differentiable input whose gradient can be read back after backward().
  Var leaf(Mat value);

  /// Seeds d(loss)/d(loss) = 1 and propagates. A tape can be consumed once.
  void backward(const Var& loss);

  void record(const std::shared_ptr<detail::Node>& node);

 private:
  Tape(const ParamStore* params, ParamStore* grads, bool recording);

  const ParamStore* params_ = nullptr;
  ParamStore* grads_ = nullptr;
  bool recording_ = true;
  bool consumed_ = false;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::unordered_map<std::size_t, Var> bound_;
};

/// A value that never receives gradients.
Var constant(Mat value);
Var constant(double value);
/// N x 1 column built from a vector.
Var column(std::span<const double> values);

// Elementwise arithmetic (shapes must match exactly).
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator*(double s, const Var& a);
Var operator-(const Var& a);
Var add_scalar(const Var& a, double s);

Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
/// Elementwise clamp to [lo, hi]; the gradient is zero where clamped.
Var clamp(const Var& x, double lo, double hi);

/// x (N x in) * weight (in x out) + bias (1 x out).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// x (N x in) * weight (in x out), no bias.
Var matmul(const Var& x, const Var& weight);

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);

/// Reference to row `row` of source number `source`.
struct RowRef {
  std::size_t source = 0;
  Eigen::Index row = 0;
};
/// Stacks the referenced rows into a new matrix, in order.
Var gather_rows(std::span<const Var> sources, std::span<const RowRef> refs);
Var gather_rows(const Var& source, std::span<const Eigen::Index> rows);

/// Row g of the result is the sum of x's rows listed in groups[g], added in
/// the listed order.
Var group_sum(const Var& x, const std::vector<std::vector<Eigen::Index>>& groups);
/// group_sum divided by each group's size. Groups must be nonempty.
Var group_mean(const Var& x, const std::vector<std::vector<Eigen::Index>>& groups);

/// N x 1 column of per-row sums.
Var row_sum(const Var& x);
/// 1 x 1 sum of every entry.
Var sum(const Var& x);

/// base + coeff[n] * k, row by row.
Var axpy_rows(const Var& base, const Var& k, const Vec& coeff);
/// base + (step[n] / 6) * (k1 + 2 k2 + 2 k3 + k4), row by row.
Var rk4_combine(const Var& base, const Var& k1, const Var& k2, const Var& k3, const Var& k4,
                const Vec& step);

}  // namespace ndp
