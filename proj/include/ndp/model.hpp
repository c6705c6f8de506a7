#pragma once

#include "ndp/gaussian.hpp"
#include "ndp/nn.hpp"
#include "ndp/odeint.hpp"
#include "ndp/params.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ndp {

enum class Variant { Ndp, Nd2p, NdpL, Nd2pL, Np };

std::string to_string(Variant v);
/// Accepts "ndp", "nd2p", "ndp-l", "nd2p-l", "np" (case-insensitive).
Variant parse_variant(std::string_view name);

/// Everything that determines parameter shapes and model behaviour.
struct ModelSpec {
  Variant variant = Variant::Ndp;
  Eigen::Index obs_dim = 1;
  std::vector<Eigen::Index> encoder_hidden{128, 128};
  Eigen::Index r_dim = 50;
  /// Width of the representation-to-hidden layer feeding the posterior heads.
  Eigen::Index hidden_dim = 64;
  Eigen::Index latent_dim = 2;
  Eigen::Index control_dim = 10;
  /// Latent size of the NP baseline (ignored by the ODE variants).
  Eigen::Index z_dim = 50;
  std::vector<Eigen::Index> ode_hidden{50, 50};
  std::vector<Eigen::Index> decoder_hidden{128, 128};
  /// Output width of the nonlinear decoder feature map h(l, d, t).
  Eigen::Index decoder_features = 32;
  double obs_sigma = 0.1;
  /// Start of the time axis and solver step; both fix the anchored grid.
  double t0 = 0.0;
  double step = 0.05;
  bool y0_always_in_context = false;

  /// Throws DomainError / ShapeError for inconsistent settings.
  void validate() const;
  bool is_np() const { return variant == Variant::Np; }
  bool second_order() const { return variant == Variant::Nd2p || variant == Variant::Nd2pL; }
  bool latent_only() const { return variant == Variant::NdpL || variant == Variant::Nd2pL; }
  /// Size of the global latent that the context also parameterises
  /// (d for the ODE variants, z for the NP).
  Eigen::Index global_dim() const { return is_np() ? z_dim : control_dim; }
};

nlohmann::json to_json(const ModelSpec& spec);
/// Missing keys keep their defaults; unknown keys throw std::invalid_argument.
ModelSpec model_spec_from_json(const nlohmann::json& doc);

/// Observed (time, value) pairs. Order carries no meaning.
struct ContextSet {
  std::vector<double> t;
  Mat y;  // size() x obs_dim

  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }
};

/// One concrete draw of the latent variables. For the NP, `l0` is empty and
/// `d` holds z.
struct LatentSample {
  Vec l0;
  Vec d;
};

/// Context-conditioned posteriors q_L(l(t0) | C) and q_D(d | C).
/// For the NP, `l` is empty and `d` is q(z | C).
struct Posterior {
  DiagGaussian l;
  DiagGaussian d;
};

/// In-graph posterior parameters, one row per context group.
struct PosteriorVars {
  Var l_mu;
  Var l_sigma;
  Var d_mu;
  Var d_sigma;
};

/// ODE-driven process model (all four variants) or the NP baseline.
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  /// Per-point encodings f_e([t, y]) for N x (1 + obs_dim) rows.
  Var encode(Tape& tape, const Var& points) const;

  /// Posterior heads for G groups of encoded rows. Each group is averaged in
  /// the listed order; `y0` (G x obs_dim) is required exactly when the spec
  /// derives q_L from the initial observation.
  PosteriorVars heads(Tape& tape, const Var& encoded,
                      const std::vector<std::vector<Eigen::Index>>& groups,
                      const Var& y0 = {}) const;

  /// dl/dt for N rows; `time` is N x 1.
  Var derivative(Tape& tape, const Var& l, const Var& d, const Var& time) const;

  /// Decoder mean for N rows of latent state (or z for the NP).
  Var decode_mean(Tape& tape, const Var& l, const Var& d, const Var& time) const;

  /// Evolves B initial states under their controls over the grid.
  BatchTrajectory integrate(Tape& tape, const Var& l0, const Var& d, const TimeGrid& grid) const;

 private:
  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  ParamStore params_;
  Mlp encoder_;
  LinearLayer to_hidden_;
  LinearLayer y0_to_hidden_;
  LinearLayer l_mu_, l_sigma_, d_mu_, d_sigma_;
  Mlp ode_;
  Mlp decoder_;  // h(l, d, t) for NDP/ND2P; the whole decoder for the NP
  LinearLayer decoder_out_;
};

// ---- helpers shared by the training and active-learning code

/// Rows [t, y...] for the listed indices of a context set.
Mat context_points(const ContextSet& ctx);

/// Indices 0..n-1 of `ctx` sorted lexicographically by (t, y). Averaging in
/// this order makes aggregation independent of the order pairs arrive in.
std::vector<Eigen::Index> canonical_order(const ContextSet& ctx);

/// Index of the pair at t == t0 (first in canonical order), if any.
std::optional<Eigen::Index> initial_observation(const ContextSet& ctx, double t0);

// ---- value-level operations

/// Mean of f_e over the context. Throws DomainError for an empty context.
Vec encode_aggregate(const Model& model, const ContextSet& ctx);

/// q_L and q_D given the context. Throws DomainError when the spec requires
/// y0 in the context and no pair sits at t0.
Posterior infer_posterior(const Model& model, const ContextSet& ctx);

/// f_theta for the model's variant (ND2P variants return (l2, f(l, d, t))).
Vec latent_derivative(const Model& model, const Vec& l, const Vec& d, double t);

/// Predictive distribution over y from a latent state (sigma = obs_sigma).
DiagGaussian decode(const Model& model, const Vec& l, const Vec& d, double t);

struct PredictOptions {
  /// 0 for mean mode only; otherwise the number of sampled trajectories.
  int samples = 0;
  std::uint64_t seed = 0;
  /// Sample from the standard-normal prior; the context must then be empty.
  bool prior = false;
};

struct Prediction {
  /// Requested times in request order.
  std::vector<double> times;
  /// Decoded trajectory of the posterior means (l0 = mu_L, d = mu_D).
  Mat mean;
  /// One times x obs_dim matrix per sampled latent draw.
  std::vector<Mat> samples;
};

/// Standard-normal distributions over l0 and d (z for the NP).
Posterior prior_posterior(const ModelSpec& spec);

/// Predictions at `times` given the context. Dispatches to np_predict for the
/// NP baseline.
Prediction predict(const Model& model, const ContextSet& ctx, std::span<const double> times,
                   const PredictOptions& options = {});

/// NP path: g(t, z) with z inferred exactly like q_D.
Prediction np_predict(const Model& model, const ContextSet& ctx, std::span<const double> times,
                      const PredictOptions& options = {});

/// Decoded means for fixed latent samples; result[k] is times x obs_dim for
/// latents[k]. All samples share one batched integration.
std::vector<Mat> decode_latents(const Model& model, std::span<const LatentSample> latents,
                                std::span<const double> times);

/// Draws `count` latent samples from a posterior with standard-normal noise.
std::vector<LatentSample> sample_latents(const Posterior& posterior, int count,
                                         std::mt19937_64& rng);

// ---- checkpoints

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra = nlohmann::json::object());
/// Throws IoError when the file is missing or unreadable.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace ndp
