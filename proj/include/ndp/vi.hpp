#pragma once

#include "ndp/data.hpp"
#include "ndp/model.hpp"
#include "ndp/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace ndp {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 5;
  int context_min = 1;
  int context_max = 10;
  int extra_min = 0;
  int extra_max = 5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int eval_context = 10;
  /// Seed of the test-time context draws; fixed so epochs are comparable.
  std::uint64_t eval_seed = 0;
  /// Always put the first observation of a series into the context.
  bool force_initial = false;

  /// Throws DomainError on an invalid combination.
  void validate() const;
};

/// Defaults of the 1-D protocol, or the Lotka-Volterra one for that task.
TrainConfig default_train_config(Task task);

/// Model spec matching a task: observation width, t0 and a solver step of
/// one hundredth of the time window.
ModelSpec default_model_spec(const TaskSpec& task, Variant variant);

/// Points sampled from one series for a training step. The context is the
/// first `context.size()` target points, so C is a subset of T.
struct Episode {
  ContextSet context;
  ContextSet target;
};

/// Draws m ~ U[context_min, context_max] and n ~ U[extra_min, extra_max],
/// then m + n distinct points uniformly; the first m form the context.
/// When m + n exceeds the series length, n is cut to length - m. Throws
/// DomainError when the series has fewer than context_max or
/// context_min + extra_min points.
Episode split_context_target(const TimeSeries& series, std::mt19937_64& rng, const TrainConfig& cfg);

/// KL(q || p) for diagonal Gaussians. Throws DomainError for a non-positive
/// sigma and ShapeError for mismatched dimensions.
double kl_diag(const DiagGaussian& q, const DiagGaussian& p);
/// Row-wise KL(q || p); every argument is N x k, the result N x 1.
Var kl_diag(const Var& q_mu, const Var& q_sigma, const Var& p_mu, const Var& p_sigma);

/// Sum over entries of log N(y | mean, sigma^2).
double gaussian_loglik(const Vec& y, const Vec& mean, double sigma);
/// Entrywise negative log-density (N x k), for constant sigma.
Var gaussian_nll(const Var& y, const Var& mean, double sigma);

struct ElboTerms {
  /// 1 x 1: mean over the batch of nll + kl_l + kl_d.
  Var loss;
  /// B x 1 per-series terms. kl_l is zero for the NP baseline.
  Var nll;
  Var kl_l;
  Var kl_d;
};

/// Negative ELBO for a batch of episodes, with one latent draw per series
/// taken from q(. | T). All trajectories share one integration over the
/// union of target times.
ElboTerms batch_elbo(Tape& tape, const Model& model, std::span<const Episode> batch,
                     std::mt19937_64& rng);

/// Single-series negative ELBO, evaluated without recording gradients.
double elbo_loss(const Model& model, const ContextSet& context, const ContextSet& target,
                 std::mt19937_64& rng);

/// Mean squared error of mean-mode predictions at every point of every
/// series, given `context_size` random context points per series.
double evaluate_mse(const Model& model, std::span<const TimeSeries> series, int context_size,
                    std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_mse = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// Epoch with the lowest test MSE, and the parameters it ended with.
  int best_epoch = 0;
  double best_test_mse = 0.0;
  std::optional<ParamStore> best_params;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place with RMSprop. The model keeps its final-epoch parameters;
/// the best-by-test ones are returned in the history. Throws DivergenceError
/// naming the step when the loss or a gradient stops being finite.
TrainHistory train(Model& model, std::span<const TimeSeries> train_set,
                   std::span<const TimeSeries> test_set, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

}  // namespace ndp
