#include "ndp/tape.hpp"

#include "ndp/errors.hpp"
#include "ndp/params.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace ndp {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

// Tape that should record an op over `inputs`, or nullptr for a constant.
Tape* recording_tape(std::initializer_list<const Var*> inputs) {
  for (const Var* v : inputs) {
    if (v->requires_grad() && v->tape() != nullptr && v->tape()->recording()) return v->tape();
  }
  return nullptr;
}

// Builds the result node. `make_backward` is only invoked when the result
// takes part in differentiation.
template <class MakeBackward>
Var result(Mat value, std::initializer_list<const Var*> inputs, MakeBackward&& make_backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  Tape* tape = recording_tape(inputs);
  if (tape != nullptr) {
    node->requires_grad = true;
    node->backward = make_backward();
    tape->record(node);
  }
  return make_var(Mat{}, node, tape);
}

Var plain(Mat value) { return make_var(std::move(value), nullptr, nullptr); }

// Accumulates `g` into an input's gradient if it participates.
template <class Expr>
void accumulate(const NodePtr& input, const Expr& g) {
  if (input->requires_grad) input->grad_buffer() += g;
}

}  // namespace

Var make_var(Mat value, std::shared_ptr<detail::Node> node, Tape* tape) {
  Var v;
  if (!node) {
    node = std::make_shared<detail::Node>();
    node->value = std::move(value);
  }
  v.node_ = std::move(node);
  v.tape_ = v.node_->requires_grad ? tape : nullptr;
  return v;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on " + shape_str(value()));
  return value()(0, 0);
}

Mat Var::grad() const {
  if (node_->grad.size() == 0) return Mat::Zero(rows(), cols());
  return node_->grad;
}

// ---------------------------------------------------------------- Tape

Tape::Tape() : Tape(nullptr, nullptr, true) {}

Tape::Tape(ParamStore& params) : Tape(&params, &params, true) {}

Tape::Tape(const ParamStore* params, ParamStore* grads, bool recording)
    : params_(params), grads_(grads), recording_(recording) {}

Tape Tape::inference(const ParamStore& params) { return Tape(&params, nullptr, false); }

Tape Tape::inference() { return Tape(nullptr, nullptr, false); }

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  nodes_.push_back(node);
}

Var Tape::param(std::size_t id) {
  if (params_ == nullptr) throw StateError("tape has no parameter store");
  if (auto it = bound_.find(id); it != bound_.end()) return it->second;
  auto node = std::make_shared<detail::Node>();
  node->value = params_->value(id);
  if (recording_ && grads_ != nullptr) {
    node->requires_grad = true;
    ParamStore* store = grads_;
    node->backward = [store, id](detail::Node& self) { store->grad(id) += self.grad; };
    record(node);
  }
  Var v = make_var(Mat{}, node, this);
  bound_.emplace(id, v);
  return v;
}

Var Tape::param(std::string_view name) {
  if (params_ == nullptr) throw StateError("tape has no parameter store");
  return param(params_->id(name));
}

Var Tape::leaf(Mat value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  if (recording_) {
    node->requires_grad = true;
    record(node);
  }
  return make_var(Mat{}, node, this);
}

void Tape::backward(const Var& loss) {
  if (consumed_) throw StateError("backward() called twice on the same tape");
  if (!recording_) throw StateError("backward() on an inference tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("loss must be 1x1");
  if (!std::isfinite(loss.item())) throw DivergenceError("non-finite loss");
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.size() != 0 && node.backward) node.backward(node);
  }
  nodes_.clear();
  bound_.clear();
}

// ---------------------------------------------------------------- leaves

Var constant(Mat value) { return plain(std::move(value)); }

Var constant(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return plain(std::move(m));
}

Var column(std::span<const double> values) {
  Mat m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return plain(std::move(m));
}

// ---------------------------------------------------------------- elementwise

Var operator+(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return result(a.value() + b.value(), {&a, &b}, [an = a.node(), bn = b.node()] {
    return [an, bn](detail::Node& out) {
      accumulate(an, out.grad);
      accumulate(bn, out.grad);
    };
  });
}

Var operator-(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return result(a.value() - b.value(), {&a, &b}, [an = a.node(), bn = b.node()] {
    return [an, bn](detail::Node& out) {
      accumulate(an, out.grad);
      accumulate(bn, -out.grad);
    };
  });
}

Var operator*(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return result(a.value().cwiseProduct(b.value()), {&a, &b}, [an = a.node(), bn = b.node()] {
    return [an, bn](detail::Node& out) {
      accumulate(an, out.grad.cwiseProduct(bn->value));
      accumulate(bn, out.grad.cwiseProduct(an->value));
    };
  });
}

Var operator/(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  return result(a.value().cwiseQuotient(b.value()), {&a, &b}, [an = a.node(), bn = b.node()] {
    return [an, bn](detail::Node& out) {
      accumulate(an, out.grad.cwiseQuotient(bn->value));
      accumulate(bn, -(out.grad.array() * an->value.array() / bn->value.array().square()).matrix());
    };
  });
}

Var operator*(double s, const Var& a) {
  return result(s * a.value(), {&a}, [an = a.node(), s] {
    return [an, s](detail::Node& out) { accumulate(an, s * out.grad); };
  });
}

Var operator-(const Var& a) { return -1.0 * a; }

Var add_scalar(const Var& a, double s) {
  return result((a.value().array() + s).matrix(), {&a}, [an = a.node()] {
    return [an](detail::Node& out) { accumulate(an, out.grad); };
  });
}

namespace {

// Transcendentals are applied one scalar at a time through <cmath> so that an
// entry's bits never depend on its position inside a SIMD packet.
template <class F>
Mat map_scalar(const Mat& x, F f) {
  Mat y(x.rows(), x.cols());
  const double* src = x.data();
  double* dst = y.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) dst[i] = f(src[i]);
  return y;
}

}  // namespace

Var relu(const Var& x) {
  return result(x.value().cwiseMax(0.0), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) {
      accumulate(xn, (xn->value.array() > 0.0).select(out.grad, 0.0).matrix());
    };
  });
}

Var tanh(const Var& x) {
  Mat y = map_scalar(x.value(), [](double v) { return std::tanh(v); });
  return result(std::move(y), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) {
      accumulate(xn, (out.grad.array() * (1.0 - out.value.array().square())).matrix());
    };
  });
}

Var sigmoid(const Var& x) {
  Mat y = map_scalar(x.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return result(std::move(y), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) {
      accumulate(xn, (out.grad.array() * out.value.array() * (1.0 - out.value.array())).matrix());
    };
  });
}

Var exp(const Var& x) {
  return result(map_scalar(x.value(), [](double v) { return std::exp(v); }), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) { accumulate(xn, out.grad.cwiseProduct(out.value)); };
  });
}

Var log(const Var& x) {
  return result(map_scalar(x.value(), [](double v) { return std::log(v); }), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) { accumulate(xn, out.grad.cwiseQuotient(xn->value)); };
  });
}

Var square(const Var& x) {
  return result(x.value().array().square().matrix(), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) {
      accumulate(xn, (2.0 * out.grad.array() * xn->value.array()).matrix());
    };
  });
}

Var clamp(const Var& x, double lo, double hi) {
  return result(x.value().cwiseMax(lo).cwiseMin(hi), {&x}, [xn = x.node(), lo, hi] {
    return [xn, lo, hi](detail::Node& out) {
      const auto inside = (xn->value.array() >= lo) && (xn->value.array() <= hi);
      accumulate(xn, inside.select(out.grad, 0.0).matrix());
    };
  });
}

// ---------------------------------------------------------------- dense layers

namespace {

// out.row(n) = bias + sum_i x(n, i) * w.row(i), accumulated in increasing i.
// Each output row sees exactly the same sequence of operations whatever the
// batch size, so rows are bit-reproducible in isolation.
Mat dense_forward(const Mat& x, const Mat& w, const Mat* bias) {
  const Eigen::Index n_rows = x.rows();
  const Eigen::Index n_in = w.rows();
  const Eigen::Index n_out = w.cols();
  Mat out(n_rows, n_out);
  for (Eigen::Index n = 0; n < n_rows; ++n) {
    double* o = out.row(n).data();
    if (bias != nullptr) {
      const double* b = bias->data();
      for (Eigen::Index j = 0; j < n_out; ++j) o[j] = b[j];
    } else {
      for (Eigen::Index j = 0; j < n_out; ++j) o[j] = 0.0;
    }
    const double* xr = x.row(n).data();
    for (Eigen::Index i = 0; i < n_in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wr = w.row(i).data();
      for (Eigen::Index j = 0; j < n_out; ++j) o[j] += xi * wr[j];
    }
  }
  return out;
}

}  // namespace

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.cols() != weight.rows()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " but weight is " +
                     shape_str(weight.value()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ShapeError("linear: bias " + shape_str(bias.value()) + " for weight " +
                     shape_str(weight.value()));
  }
  Mat y = dense_forward(x.value(), weight.value(), &bias.value());
  return result(std::move(y), {&x, &weight, &bias},
                [xn = x.node(), wn = weight.node(), bn = bias.node()] {
                  return [xn, wn, bn](detail::Node& out) {
                    if (xn->requires_grad) xn->grad_buffer().noalias() += out.grad * wn->value.transpose();
                    if (wn->requires_grad) wn->grad_buffer().noalias() += xn->value.transpose() * out.grad;
                    if (bn->requires_grad) bn->grad_buffer() += out.grad.colwise().sum();
                  };
                });
}

Var matmul(const Var& x, const Var& weight) {
  if (x.cols() != weight.rows()) {
    throw ShapeError("matmul: " + shape_str(x.value()) + " by " + shape_str(weight.value()));
  }
  Mat y = dense_forward(x.value(), weight.value(), nullptr);
  return result(std::move(y), {&x, &weight}, [xn = x.node(), wn = weight.node()] {
    return [xn, wn](detail::Node& out) {
      if (xn->requires_grad) xn->grad_buffer().noalias() += out.grad * wn->value.transpose();
      if (wn->requires_grad) wn->grad_buffer().noalias() += xn->value.transpose() * out.grad;
    };
  });
}

// ---------------------------------------------------------------- reshaping

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Mat y(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(y);
  Tape* tape = nullptr;
  for (const Var& p : parts) {
    if (p.requires_grad() && p.tape() != nullptr && p.tape()->recording()) {
      tape = p.tape();
      break;
    }
  }
  if (tape != nullptr) {
    std::vector<NodePtr> inputs;
    inputs.reserve(parts.size());
    for (const Var& p : parts) inputs.push_back(p.node());
    node->requires_grad = true;
    node->backward = [inputs = std::move(inputs)](detail::Node& out) {
      Eigen::Index c = 0;
      for (const auto& in : inputs) {
        accumulate(in, out.grad.middleCols(c, in->value.cols()));
        c += in->value.cols();
      }
    };
    tape->record(node);
  }
  return make_var(Mat{}, node, tape);
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: range out of bounds for " + shape_str(x.value()));
  }
  return result(Mat(x.value().middleCols(start, count)), {&x}, [xn = x.node(), start, count] {
    return [xn, start, count](detail::Node& out) {
      if (xn->requires_grad) xn->grad_buffer().middleCols(start, count) += out.grad;
    };
  });
}

Var gather_rows(std::span<const Var> sources, std::span<const RowRef> refs) {
  if (sources.empty()) throw ShapeError("gather_rows: no sources");
  const Eigen::Index cols = sources.front().cols();
  for (const Var& s : sources) {
    if (s.cols() != cols) throw ShapeError("gather_rows: column count mismatch");
  }
  Mat y(static_cast<Eigen::Index>(refs.size()), cols);
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const RowRef& r = refs[k];
    if (r.source >= sources.size() || r.row < 0 || r.row >= sources[r.source].rows()) {
      throw ShapeError("gather_rows: reference out of range");
    }
    y.row(static_cast<Eigen::Index>(k)) = sources[r.source].value().row(r.row);
  }
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(y);
  Tape* tape = nullptr;
  for (const Var& s : sources) {
    if (s.requires_grad() && s.tape() != nullptr && s.tape()->recording()) {
      tape = s.tape();
      break;
    }
  }
  if (tape != nullptr) {
    std::vector<NodePtr> inputs;
    inputs.reserve(sources.size());
    for (const Var& s : sources) inputs.push_back(s.node());
    node->requires_grad = true;
    node->backward = [inputs = std::move(inputs),
                      refs = std::vector<RowRef>(refs.begin(), refs.end())](detail::Node& out) {
      for (std::size_t k = 0; k < refs.size(); ++k) {
        const auto& in = inputs[refs[k].source];
        if (in->requires_grad) {
          in->grad_buffer().row(refs[k].row) += out.grad.row(static_cast<Eigen::Index>(k));
        }
      }
    };
    tape->record(node);
  }
  return make_var(Mat{}, node, tape);
}

Var gather_rows(const Var& source, std::span<const Eigen::Index> rows) {
  std::vector<RowRef> refs;
  refs.reserve(rows.size());
  for (Eigen::Index r : rows) refs.push_back({0, r});
  return gather_rows(std::span<const Var>(&source, 1), refs);
}

Var group_sum(const Var& x, const std::vector<std::vector<Eigen::Index>>& groups) {
  Mat y = Mat::Zero(static_cast<Eigen::Index>(groups.size()), x.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (Eigen::Index r : groups[g]) {
      if (r < 0 || r >= x.rows()) throw ShapeError("group_sum: row index out of range");
      y.row(static_cast<Eigen::Index>(g)) += x.value().row(r);
    }
  }
  return result(std::move(y), {&x}, [xn = x.node(), groups] {
    return [xn, groups](detail::Node& out) {
      if (!xn->requires_grad) return;
      Mat& gx = xn->grad_buffer();
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (Eigen::Index r : groups[g]) gx.row(r) += out.grad.row(static_cast<Eigen::Index>(g));
      }
    };
  });
}

Var group_mean(const Var& x, const std::vector<std::vector<Eigen::Index>>& groups) {
  Mat y = Mat::Zero(static_cast<Eigen::Index>(groups.size()), x.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw DomainError("group_mean: empty group");
    for (Eigen::Index r : groups[g]) {
      if (r < 0 || r >= x.rows()) throw ShapeError("group_mean: row index out of range");
      y.row(static_cast<Eigen::Index>(g)) += x.value().row(r);
    }
    y.row(static_cast<Eigen::Index>(g)) /= static_cast<double>(groups[g].size());
  }
  return result(std::move(y), {&x}, [xn = x.node(), groups] {
    return [xn, groups](detail::Node& out) {
      if (!xn->requires_grad) return;
      Mat& gx = xn->grad_buffer();
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const double inv = 1.0 / static_cast<double>(groups[g].size());
        for (Eigen::Index r : groups[g]) gx.row(r) += inv * out.grad.row(static_cast<Eigen::Index>(g));
      }
    };
  });
}

Var row_sum(const Var& x) {
  return result(Mat(x.value().rowwise().sum()), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) {
      if (xn->requires_grad) xn->grad_buffer().colwise() += out.grad.col(0);
    };
  });
}

Var sum(const Var& x) {
  Mat y(1, 1);
  y(0, 0) = x.value().sum();
  return result(std::move(y), {&x}, [xn = x.node()] {
    return [xn](detail::Node& out) {
      if (xn->requires_grad) xn->grad_buffer().array() += out.grad(0, 0);
    };
  });
}

// ---------------------------------------------------------------- integrator kernels

Var axpy_rows(const Var& base, const Var& k, const Vec& coeff) {
  require_same_shape(base, k, "axpy_rows");
  if (coeff.size() != base.rows()) throw ShapeError("axpy_rows: coefficient count");
  Mat y = base.value();
  for (Eigen::Index n = 0; n < y.rows(); ++n) {
    const double c = coeff[n];
    for (Eigen::Index j = 0; j < y.cols(); ++j) y(n, j) = y(n, j) + c * k.value()(n, j);
  }
  return result(std::move(y), {&base, &k}, [bn = base.node(), kn = k.node(), coeff] {
    return [bn, kn, coeff](detail::Node& out) {
      accumulate(bn, out.grad);
      if (kn->requires_grad) kn->grad_buffer() += coeff.asDiagonal() * out.grad;
    };
  });
}

Var rk4_combine(const Var& base, const Var& k1, const Var& k2, const Var& k3, const Var& k4,
                const Vec& step) {
  require_same_shape(base, k1, "rk4_combine");
  require_same_shape(base, k2, "rk4_combine");
  require_same_shape(base, k3, "rk4_combine");
  require_same_shape(base, k4, "rk4_combine");
  if (step.size() != base.rows()) throw ShapeError("rk4_combine: step count");
  Mat y = base.value();
  for (Eigen::Index n = 0; n < y.rows(); ++n) {
    const double w = step[n] / 6.0;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double incr = k1.value()(n, j) + 2.0 * k2.value()(n, j) + 2.0 * k3.value()(n, j) +
                          k4.value()(n, j);
      y(n, j) = y(n, j) + w * incr;
    }
  }
  return result(std::move(y), {&base, &k1, &k2, &k3, &k4},
                [bn = base.node(), n1 = k1.node(), n2 = k2.node(), n3 = k3.node(),
                 n4 = k4.node(), step] {
                  return [bn, n1, n2, n3, n4, step](detail::Node& out) {
                    accumulate(bn, out.grad);
                    const Vec w = step / 6.0;
                    const Mat g1 = w.asDiagonal() * out.grad;
                    accumulate(n1, g1);
                    accumulate(n2, 2.0 * g1);
                    accumulate(n3, 2.0 * g1);
                    accumulate(n4, g1);
                  };
                });
}

}  // namespace ndp
