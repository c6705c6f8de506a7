#include "ndp/odeint.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ndp {

long TimeGrid::last_anchor() const {
  return anchor.empty() ? 0 : *std::max_element(anchor.begin(), anchor.end());
}

TimeGrid prepare_times(std::span<const double> targets, double t0, double step) {
  if (targets.empty()) throw DomainError("prepare_times: empty target list");
  if (!(step > 0.0) || !std::isfinite(step)) throw DomainError("prepare_times: step must be positive");
  for (double t : targets) {
    if (!std::isfinite(t)) throw DomainError("prepare_times: non-finite target time");
    if (t < t0) {
      throw DomainError("prepare_times: target time " + std::to_string(t) +
                        " precedes t0 = " + std::to_string(t0) +
                        "; backward integration is not supported");
    }
  }
  TimeGrid grid;
  grid.t0 = t0;
  grid.step = step;
  grid.times.assign(targets.begin(), targets.end());
  std::sort(grid.times.begin(), grid.times.end());
  grid.times.erase(std::unique(grid.times.begin(), grid.times.end()), grid.times.end());

  grid.inverse.reserve(targets.size());
  for (double t : targets) {
    auto it = std::lower_bound(grid.times.begin(), grid.times.end(), t);
    grid.inverse.push_back(static_cast<std::size_t>(it - grid.times.begin()));
  }

  grid.anchor.reserve(grid.times.size());
  grid.residual.reserve(grid.times.size());
  for (double t : grid.times) {
    long k = static_cast<long>(std::floor((t - t0) / step));
    // Division rounding can land one cell off either way.
    while (k > 0 && grid.grid_time(k) > t) --k;
    while (grid.grid_time(k + 1) <= t) ++k;
    grid.anchor.push_back(k);
    grid.residual.push_back(t - grid.grid_time(k));
  }
  return grid;
}

Mat BatchTrajectory::series(Eigen::Index b) const {
  Mat out(static_cast<Eigen::Index>(slots), states.cols());
  for (std::size_t s = 0; s < slots; ++s) {
    out.row(static_cast<Eigen::Index>(s)) = states.value().row(row(s, b));
  }
  return out;
}

Var rk4_step(const OdeFunc& f, const Var& state, const Var& cond, const Vec& time,
             const Vec& step) {
  const Vec half = 0.5 * step;
  const Vec t_half = time + half;
  const Vec t_full = time + step;
  auto col = [](const Vec& v) { return column(std::span<const double>(v.data(), v.size())); };
  const Var k1 = f(state, cond, col(time));
  const Var k2 = f(axpy_rows(state, k1, half), cond, col(t_half));
  const Var k3 = f(axpy_rows(state, k2, half), cond, col(t_half));
  const Var k4 = f(axpy_rows(state, k3, step), cond, col(t_full));
  return rk4_combine(state, k1, k2, k3, k4, step);
}

namespace {

void check_finite(const Var& v, Eigen::Index batch, const std::string& where) {
  if (v.value().allFinite()) return;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (!v.value().row(r).allFinite()) {
      throw DivergenceError("non-finite ODE state at " + where + ", batch row " +
                            std::to_string(batch > 0 ? r % batch : r));
    }
  }
}

}  // namespace

BatchTrajectory batch_integrate(const OdeFunc& f, const Var& initial, const Var& cond,
                                const TimeGrid& grid) {
  const Eigen::Index batch = initial.rows();
  if (batch == 0) throw ShapeError("batch_integrate: empty batch");
  if (cond.defined() && cond.rows() != batch) {
    throw ShapeError("batch_integrate: conditioning rows do not match the batch");
  }
  if (grid.size() == 0) throw DomainError("batch_integrate: empty grid");
  check_finite(initial, batch, "the initial state");

  // Grid states up to the last anchor any slot needs.
  const long last = grid.last_anchor();
  std::vector<Var> grid_states;
  grid_states.reserve(static_cast<std::size_t>(last) + 1);
  grid_states.push_back(initial);
  const Vec step = Vec::Constant(batch, grid.step);
  for (long k = 0; k < last; ++k) {
    const Vec time = Vec::Constant(batch, grid.grid_time(k));
    grid_states.push_back(rk4_step(f, grid_states.back(), cond, time, step));
    check_finite(grid_states.back(), batch, "grid step " + std::to_string(k + 1));
  }

  // All partial steps run as one stacked evaluation; row order in the stack
  // does not affect any row's value.
  std::vector<RowRef> base_refs;
  std::vector<Eigen::Index> cond_rows;
  std::vector<double> partial_time;
  std::vector<double> partial_step;
  for (std::size_t s = 0; s < grid.size(); ++s) {
    if (grid.residual[s] == 0.0) continue;
    for (Eigen::Index b = 0; b < batch; ++b) {
      base_refs.push_back({static_cast<std::size_t>(grid.anchor[s]), b});
      cond_rows.push_back(b);
      partial_time.push_back(grid.grid_time(grid.anchor[s]));
      partial_step.push_back(grid.residual[s]);
    }
  }
  Var partial;
  if (!base_refs.empty()) {
    const Var base = gather_rows(grid_states, base_refs);
    const Var stacked_cond = cond.defined() ? gather_rows(cond, cond_rows) : Var{};
    const Vec time = Eigen::Map<const Vec>(partial_time.data(), static_cast<Eigen::Index>(partial_time.size()));
    const Vec step_r = Eigen::Map<const Vec>(partial_step.data(), static_cast<Eigen::Index>(partial_step.size()));
    partial = rk4_step(f, base, stacked_cond, time, step_r);
    check_finite(partial, batch, "a partial step");
  }

  // Assemble slot-major output.
  std::vector<Var> sources = grid_states;
  const std::size_t partial_source = sources.size();
  if (partial.defined()) sources.push_back(partial);
  std::vector<RowRef> out_refs;
  out_refs.reserve(grid.size() * static_cast<std::size_t>(batch));
  Eigen::Index next_partial = 0;
  for (std::size_t s = 0; s < grid.size(); ++s) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (grid.residual[s] == 0.0) {
        out_refs.push_back({static_cast<std::size_t>(grid.anchor[s]), b});
      } else {
        out_refs.push_back({partial_source, next_partial++});
      }
    }
  }
  BatchTrajectory out;
  out.states = gather_rows(sources, out_refs);
  out.batch = batch;
  out.slots = grid.size();
  return out;
}

Var rk4_integrate(const OdeFunc& f, const Var& initial, const Var& cond, const TimeGrid& grid) {
  if (initial.rows() != 1) throw ShapeError("rk4_integrate: initial state must be a single row");
  return batch_integrate(f, initial, cond, grid).states;
}

}  // namespace ndp
