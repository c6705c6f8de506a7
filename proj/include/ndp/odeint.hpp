#pragma once

// Fixed-step RK4 over a grid anchored at t0.
//
// Grid states live at t0, t0 + h, t0 + 2h, ... and each requested time is
// reached by one partial RK4 step launched from the grid state preceding it.
// The state returned for a time therefore depends only on (f, initial state,
// t0, h, time), never on which other times were requested alongside it.

#include "ndp/tape.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace ndp {

struct TimeGrid {
  double t0 = 0.0;
  double step = 0.0;
  /// Requested times, sorted and deduplicated.
  std::vector<double> times;
  /// inverse[i] is the slot in `times` of the i-th requested time.
  std::vector<std::size_t> inverse;
  /// Index k of the last grid point t0 + k h not after each slot's time.
  std::vector<long> anchor;
  /// times[s] - (t0 + anchor[s] h), always in [0, h).
  std::vector<double> residual;

  std::size_t size() const { return times.size(); }
  long last_anchor() const;
  double grid_time(long k) const { return t0 + static_cast<double>(k) * step; }
};

/// Sorts, deduplicates and anchors `targets`. Throws DomainError when the
/// list is empty, a time precedes t0, or the step is not positive.
TimeGrid prepare_times(std::span<const double> targets, double t0, double step);

/// Derivative callback: f(state, cond, time) for N rows at once, where `cond`
/// carries per-row conditioning (possibly undefined) and `time` is N x 1.
/// Must be row-independent and return a value shaped like `state`.
using OdeFunc = std::function<Var(const Var& state, const Var& cond, const Var& time)>;

/// States of a batch at every grid slot.
struct BatchTrajectory {
  /// (slots * batch) x dim; row slot * batch + b.
  Var states;
  Eigen::Index batch = 0;
  std::size_t slots = 0;

  Eigen::Index row(std::size_t slot, Eigen::Index b) const {
    return static_cast<Eigen::Index>(slot) * batch + b;
  }
  /// Values of batch row b at every slot (slots x dim).
  Mat series(Eigen::Index b) const;
};

/// One classic RK4 step per row, row n advancing by step[n] from time[n].
Var rk4_step(const OdeFunc& f, const Var& state, const Var& cond, const Vec& time,
             const Vec& step);

/// Integrates every row of `initial` (B x dim) over the shared grid.
/// `cond` is B x k (or undefined) and is handed to f alongside each row.
/// Throws DivergenceError naming the step and batch row on a non-finite state.
BatchTrajectory batch_integrate(const OdeFunc& f, const Var& initial, const Var& cond,
                                const TimeGrid& grid);

/// Single-trajectory form: `initial` is 1 x dim; returns slots x dim.
Var rk4_integrate(const OdeFunc& f, const Var& initial, const Var& cond, const TimeGrid& grid);

}  // namespace ndp
