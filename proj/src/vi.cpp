#include "ndp/vi.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>

namespace ndp {

void TrainConfig::validate() const {
  if (epochs < 0) throw DomainError("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw DomainError("TrainConfig: batch size must be >= 1");
  if (context_min < 1 || context_max < context_min) {
    throw DomainError("TrainConfig: need 1 <= context_min <= context_max");
  }
  if (extra_min < 0 || extra_max < extra_min) {
    throw DomainError("TrainConfig: need 0 <= extra_min <= extra_max");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw DomainError("TrainConfig: learning rate must be positive");
  }
  if (eval_context < 1) throw DomainError("TrainConfig: eval context must be >= 1");
}

TrainConfig default_train_config(Task task) {
  TrainConfig cfg;
  if (task == Task::LotkaVolterra) {
    cfg.context_max = 100;
    cfg.extra_max = 45;
    cfg.eval_context = 90;
  }
  return cfg;
}

ModelSpec default_model_spec(const TaskSpec& task, Variant variant) {
  ModelSpec spec;
  spec.variant = variant;
  spec.obs_dim = task.obs_dim();
  spec.t0 = task.t_begin();
  spec.step = (task.t_end() - task.t_begin()) / 100.0;
  return spec;
}

// ---------------------------------------------------------------- sampling

Episode split_context_target(const TimeSeries& series, std::mt19937_64& rng, const TrainConfig& cfg) {
  const auto length = static_cast<int>(series.size());
  if (length < cfg.context_max || length < cfg.context_min + cfg.extra_min) {
    throw DomainError("series has " + std::to_string(length) + " points, too few for context size " +
                      std::to_string(cfg.context_max));
  }
  std::uniform_int_distribution<int> pick_m(cfg.context_min, cfg.context_max);
  std::uniform_int_distribution<int> pick_n(cfg.extra_min, cfg.extra_max);
  const int m = pick_m(rng);
  const int n = std::min(pick_n(rng), length - m);

  auto chosen = choose_indices(length, m + n, rng);
  if (cfg.force_initial) {
    const auto it = std::find(chosen.begin(), chosen.end(), Eigen::Index{0});
    if (it == chosen.end()) {
      chosen[static_cast<std::size_t>(m - 1)] = 0;
    } else if (it - chosen.begin() >= m) {
      std::iter_swap(it, chosen.begin() + (m - 1));
    }
  }

  Episode ep;
  ep.target.y.resize(m + n, series.dim());
  for (int i = 0; i < m + n; ++i) {
    const Eigen::Index src = chosen[static_cast<std::size_t>(i)];
    ep.target.t.push_back(series.times[static_cast<std::size_t>(src)]);
    ep.target.y.row(i) = series.values.row(src);
  }
  ep.context.t.assign(ep.target.t.begin(), ep.target.t.begin() + m);
  ep.context.y = ep.target.y.topRows(m);
  return ep;
}

// ---------------------------------------------------------------- densities

double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  q.validate();
  p.validate();
  if (q.dim() != p.dim()) throw ShapeError("kl_diag: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.dim(); ++i) {
    const double diff = q.mu[i] - p.mu[i];
    total += std::log(p.sigma[i]) - std::log(q.sigma[i]) +
             (q.sigma[i] * q.sigma[i] + diff * diff) / (2.0 * p.sigma[i] * p.sigma[i]) - 0.5;
  }
  return total;
}

Var kl_diag(const Var& q_mu, const Var& q_sigma, const Var& p_mu, const Var& p_sigma) {
  const Var ratio = (square(q_sigma) + square(q_mu - p_mu)) / (2.0 * square(p_sigma));
  return row_sum(add_scalar(log(p_sigma) - log(q_sigma) + ratio, -0.5));
}

double gaussian_loglik(const Vec& y, const Vec& mean, double sigma) {
  if (y.size() != mean.size()) throw ShapeError("gaussian_loglik: dimension mismatch");
  if (!(sigma > 0.0)) throw DomainError("gaussian_loglik: sigma must be positive");
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
  double total = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double r = y[j] - mean[j];
    total += norm - r * r / (2.0 * sigma * sigma);
  }
  return total;
}

Var gaussian_nll(const Var& y, const Var& mean, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_nll: sigma must be positive");
  const double norm = 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
  return add_scalar((1.0 / (2.0 * sigma * sigma)) * square(y - mean), norm);
}

// ---------------------------------------------------------------- ELBO

namespace {

void check_subset(const ContextSet& context, const ContextSet& target) {
  for (std::size_t i = 0; i < context.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < target.size() && !found; ++j) {
      found = context.t[i] == target.t[j] &&
              context.y.row(static_cast<Eigen::Index>(i)) == target.y.row(static_cast<Eigen::Index>(j));
    }
    if (!found) throw DomainError("context point missing from the target set");
  }
}

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  }
  return out;
}

std::vector<Eigen::Index> range_indices(Eigen::Index begin, Eigen::Index end) {
  std::vector<Eigen::Index> out(static_cast<std::size_t>(end - begin));
  std::iota(out.begin(), out.end(), begin);
  return out;
}

}  // namespace

ElboTerms batch_elbo(Tape& tape, const Model& model, std::span<const Episode> batch,
                     std::mt19937_64& rng) {
  const ModelSpec& spec = model.spec();
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw DomainError("batch_elbo: empty batch");

  // Encoder input: every target set, then every context set. Each set is
  // one aggregation group, averaged in canonical order.
  Eigen::Index total = 0;
  for (const Episode& ep : batch) {
    if (ep.context.empty()) throw DomainError("batch_elbo: empty context set");
    for (const ContextSet* set : {&ep.target, &ep.context}) {
      if (set->y.rows() != static_cast<Eigen::Index>(set->size()) || set->y.cols() != spec.obs_dim) {
        throw ShapeError("batch_elbo: values do not match times or obs_dim");
      }
    }
    check_subset(ep.context, ep.target);
    total += static_cast<Eigen::Index>(ep.target.size() + ep.context.size());
  }
  Mat points(total, 1 + spec.obs_dim);
  std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(2 * B));
  const bool use_y0 = spec.y0_always_in_context && !spec.is_np();
  Mat y0(use_y0 ? 2 * B : 0, spec.obs_dim);
  Eigen::Index row = 0;
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const Episode& ep = batch[static_cast<std::size_t>(b)];
      const ContextSet& set = pass == 0 ? ep.target : ep.context;
      const Eigen::Index g = pass * B + b;
      points.middleRows(row, static_cast<Eigen::Index>(set.size())) = context_points(set);
      for (Eigen::Index i : canonical_order(set)) groups[static_cast<std::size_t>(g)].push_back(row + i);
      if (use_y0) {
        const auto idx = initial_observation(set, spec.t0);
        if (!idx) throw DomainError("batch_elbo: a set lacks the initial observation at t0");
        y0.row(g) = set.y.row(*idx);
      }
      row += static_cast<Eigen::Index>(set.size());
    }
  }
  const Var encoded = model.encode(tape, constant(points));
  const PosteriorVars pv = model.heads(tape, encoded, groups, use_y0 ? constant(y0) : Var{});

  const auto rows_t = range_indices(0, B);
  const auto rows_c = range_indices(B, 2 * B);
  const Var d_mu_t = gather_rows(pv.d_mu, rows_t);
  const Var d_sigma_t = gather_rows(pv.d_sigma, rows_t);

  ElboTerms out;
  out.kl_d = kl_diag(d_mu_t, d_sigma_t, gather_rows(pv.d_mu, rows_c), gather_rows(pv.d_sigma, rows_c));

  // One draw per series from q(. | T): l noise then d noise, series by series.
  const Eigen::Index l_dim = spec.is_np() ? 0 : spec.latent_dim;
  const Eigen::Index d_dim = spec.global_dim();
  Mat l_noise(B, l_dim);
  Mat d_noise(B, d_dim);
  for (Eigen::Index b = 0; b < B; ++b) {
    if (l_dim > 0) l_noise.row(b) = standard_normal(1, l_dim, rng);
    d_noise.row(b) = standard_normal(1, d_dim, rng);
  }
  const Var d = reparam_sample(d_mu_t, d_sigma_t, d_noise);

  std::vector<double> times;
  std::vector<Eigen::Index> series_of;
  std::vector<std::vector<Eigen::Index>> target_rows(static_cast<std::size_t>(B));
  Mat y_all(0, spec.obs_dim);
  for (Eigen::Index b = 0; b < B; ++b) {
    const ContextSet& target = batch[static_cast<std::size_t>(b)].target;
    for (std::size_t i = 0; i < target.size(); ++i) {
      target_rows[static_cast<std::size_t>(b)].push_back(static_cast<Eigen::Index>(times.size()));
      times.push_back(target.t[i]);
      series_of.push_back(b);
    }
  }
  y_all.resize(static_cast<Eigen::Index>(times.size()), spec.obs_dim);
  for (Eigen::Index b = 0, r = 0; b < B; ++b) {
    const ContextSet& target = batch[static_cast<std::size_t>(b)].target;
    y_all.middleRows(r, target.y.rows()) = target.y;
    r += target.y.rows();
  }

  const Var d_rows = gather_rows(d, series_of);
  const Var t_col = column(times);
  Var mean;
  if (spec.is_np()) {
    out.kl_l = constant(Mat::Zero(B, 1));
    mean = model.decode_mean(tape, Var{}, d_rows, t_col);
  } else {
    const Var l_mu_t = gather_rows(pv.l_mu, rows_t);
    const Var l_sigma_t = gather_rows(pv.l_sigma, rows_t);
    out.kl_l = kl_diag(l_mu_t, l_sigma_t, gather_rows(pv.l_mu, rows_c), gather_rows(pv.l_sigma, rows_c));
    const Var l0 = reparam_sample(l_mu_t, l_sigma_t, l_noise);
    const TimeGrid grid = prepare_times(times, spec.t0, spec.step);
    const BatchTrajectory traj = model.integrate(tape, l0, d, grid);
    std::vector<Eigen::Index> state_rows(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) state_rows[i] = traj.row(grid.inverse[i], series_of[i]);
    mean = model.decode_mean(tape, gather_rows(traj.states, state_rows), d_rows, t_col);
  }

  const Var nll_points = row_sum(gaussian_nll(constant(y_all), mean, spec.obs_sigma));
  out.nll = group_sum(nll_points, target_rows);
  out.loss = (1.0 / static_cast<double>(B)) * sum(out.nll + out.kl_l + out.kl_d);
  return out;
}

double elbo_loss(const Model& model, const ContextSet& context, const ContextSet& target,
                 std::mt19937_64& rng) {
  Tape tape = Tape::inference(model.params());
  const Episode ep{context, target};
  return batch_elbo(tape, model, std::span<const Episode>(&ep, 1), rng).loss.item();
}

// ---------------------------------------------------------------- evaluation

double evaluate_mse(const Model& model, std::span<const TimeSeries> series, int context_size,
                    std::uint64_t seed) {
  if (series.empty()) throw DomainError("evaluate_mse: empty dataset");
  std::mt19937_64 rng(seed);
  double sq = 0.0;
  double count = 0.0;
  for (const TimeSeries& s : series) {
    const auto length = static_cast<Eigen::Index>(s.size());
    if (context_size < 1 || context_size > length) {
      throw DomainError("evaluate_mse: context size must lie in [1, series length]");
    }
    ContextSet ctx;
    ctx.y.resize(context_size, s.dim());
    Eigen::Index r = 0;
    for (Eigen::Index i : choose_indices(length, context_size, rng)) {
      ctx.t.push_back(s.times[static_cast<std::size_t>(i)]);
      ctx.y.row(r++) = s.values.row(i);
    }
    const Prediction pred = predict(model, ctx, s.times);
    sq += (pred.mean - s.values).squaredNorm();
    count += static_cast<double>(s.values.size());
  }
  return sq / count;
}

// ---------------------------------------------------------------- training

void TrainHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,test_mse,seconds\n" << std::setprecision(17);
  for (const EpochRecord& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.test_mse << ',' << e.seconds << '\n';
  }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_csv(out);
  if (!out) throw IoError("failed writing " + path.string());
}

TrainHistory train(Model& model, std::span<const TimeSeries> train_set,
                   std::span<const TimeSeries> test_set, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty() || test_set.empty()) throw DomainError("train: datasets must be nonempty");
  TrainHistory history;
  if (cfg.epochs == 0) return history;

  using Clock = std::chrono::steady_clock;
  ParamStore& params = model.params();
  RmsPropConfig opt_cfg;
  opt_cfg.learning_rate = cfg.learning_rate;
  RmsProp optimizer(params, opt_cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Episode> episodes;
      episodes.reserve(last - first);
      for (std::size_t i = first; i < last; ++i) {
        episodes.push_back(split_context_target(train_set[order[i]], rng, cfg));
      }
      try {
        params.zero_grad();
        Tape tape(params);
        const ElboTerms terms = batch_elbo(tape, model, episodes, rng);
        const double value = terms.loss.item();
        tape.backward(terms.loss);
        optimizer.step(params);
        loss_sum += value;
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + " (epoch " +
                              std::to_string(epoch) + "): " + e.what());
      }
      ++batches;
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / batches;
    rec.test_mse = evaluate_mse(model, test_set, cfg.eval_context, cfg.eval_seed);
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (!std::isfinite(rec.test_mse)) {
      throw DivergenceError("test MSE is not finite after epoch " + std::to_string(epoch));
    }
    history.epochs.push_back(rec);
    if (!history.best_params || rec.test_mse < history.best_test_mse) {
      history.best_epoch = epoch;
      history.best_test_mse = rec.test_mse;
      history.best_params = params;
    }
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace ndp
