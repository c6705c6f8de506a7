#include "ndp/model.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ndp {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ndp:
      return "ndp";
    case Variant::Nd2p:
      return "nd2p";
    case Variant::NdpL:
      return "ndp-l";
    case Variant::Nd2pL:
      return "nd2p-l";
    case Variant::Np:
      return "np";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ndp") return Variant::Ndp;
  if (s == "nd2p") return Variant::Nd2p;
  if (s == "ndp-l" || s == "ndpl") return Variant::NdpL;
  if (s == "nd2p-l" || s == "nd2pl") return Variant::Nd2pL;
  if (s == "np") return Variant::Np;
  throw std::invalid_argument("unknown model variant '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  auto positive = [](Eigen::Index v, const char* what) {
    if (v < 1) throw DomainError(std::string("ModelSpec: ") + what + " must be >= 1");
  };
  positive(obs_dim, "obs_dim");
  positive(r_dim, "r_dim");
  positive(hidden_dim, "hidden_dim");
  for (auto w : encoder_hidden) positive(w, "encoder width");
  for (auto w : decoder_hidden) positive(w, "decoder width");
  if (is_np()) {
    positive(z_dim, "z_dim");
  } else {
    positive(latent_dim, "latent_dim");
    positive(control_dim, "control_dim");
    for (auto w : ode_hidden) positive(w, "ODE width");
    if (!latent_only()) positive(decoder_features, "decoder_features");
    if (second_order() && latent_dim % 2 != 0) {
      throw DomainError("ModelSpec: second-order variants need an even latent_dim");
    }
  }
  if (!(obs_sigma > 0.0)) throw DomainError("ModelSpec: obs_sigma must be positive");
  if (!(step > 0.0) || !std::isfinite(step)) throw DomainError("ModelSpec: step must be positive");
  if (!std::isfinite(t0)) throw DomainError("ModelSpec: t0 must be finite");
}

nlohmann::json to_json(const ModelSpec& s) {
  return {{"variant", to_string(s.variant)},
          {"obs_dim", s.obs_dim},
          {"encoder_hidden", s.encoder_hidden},
          {"r_dim", s.r_dim},
          {"hidden_dim", s.hidden_dim},
          {"latent_dim", s.latent_dim},
          {"control_dim", s.control_dim},
          {"z_dim", s.z_dim},
          {"ode_hidden", s.ode_hidden},
          {"decoder_hidden", s.decoder_hidden},
          {"decoder_features", s.decoder_features},
          {"obs_sigma", s.obs_sigma},
          {"t0", s.t0},
          {"step", s.step},
          {"y0_always_in_context", s.y0_always_in_context}};
}

ModelSpec model_spec_from_json(const nlohmann::json& doc) {
  ModelSpec s;
  for (const auto& [key, value] : doc.items()) {
    if (key == "variant") s.variant = parse_variant(value.get<std::string>());
    else if (key == "obs_dim") s.obs_dim = value.get<Eigen::Index>();
    else if (key == "encoder_hidden") s.encoder_hidden = value.get<std::vector<Eigen::Index>>();
    else if (key == "r_dim") s.r_dim = value.get<Eigen::Index>();
    else if (key == "hidden_dim") s.hidden_dim = value.get<Eigen::Index>();
    else if (key == "latent_dim") s.latent_dim = value.get<Eigen::Index>();
    else if (key == "control_dim") s.control_dim = value.get<Eigen::Index>();
    else if (key == "z_dim") s.z_dim = value.get<Eigen::Index>();
    else if (key == "ode_hidden") s.ode_hidden = value.get<std::vector<Eigen::Index>>();
    else if (key == "decoder_hidden") s.decoder_hidden = value.get<std::vector<Eigen::Index>>();
    else if (key == "decoder_features") s.decoder_features = value.get<Eigen::Index>();
    else if (key == "obs_sigma") s.obs_sigma = value.get<double>();
    else if (key == "t0") s.t0 = value.get<double>();
    else if (key == "step") s.step = value.get<double>();
    else if (key == "y0_always_in_context") s.y0_always_in_context = value.get<bool>();
    else throw std::invalid_argument("unknown model spec key '" + key + "'");
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------- Model

namespace {

std::vector<Eigen::Index> widths_of(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                                    Eigen::Index out) {
  std::vector<Eigen::Index> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  const ModelSpec& s = spec_;
  encoder_ = Mlp(params_, "encoder", widths_of(1 + s.obs_dim, s.encoder_hidden, s.r_dim),
                 Activation::Relu, Activation::Identity, rng);
  to_hidden_ = make_linear(params_, "to_hidden", s.r_dim, s.hidden_dim, rng);

  if (s.is_np()) {
    d_mu_ = make_linear(params_, "z_mu", s.hidden_dim, s.z_dim, rng);
    d_sigma_ = make_linear(params_, "z_sigma", s.hidden_dim, s.z_dim, rng);
    decoder_ = Mlp(params_, "decoder", widths_of(1 + s.z_dim, s.decoder_hidden, s.obs_dim),
                   Activation::Relu, Activation::Identity, rng);
    return;
  }

  if (s.y0_always_in_context) {
    y0_to_hidden_ = make_linear(params_, "y0_to_hidden", s.obs_dim, s.hidden_dim, rng);
  }
  l_mu_ = make_linear(params_, "l_mu", s.hidden_dim, s.latent_dim, rng);
  l_sigma_ = make_linear(params_, "l_sigma", s.hidden_dim, s.latent_dim, rng);
  d_mu_ = make_linear(params_, "d_mu", s.hidden_dim, s.control_dim, rng);
  d_sigma_ = make_linear(params_, "d_sigma", s.hidden_dim, s.control_dim, rng);

  const Eigen::Index ode_in = s.latent_dim + s.control_dim + 1;
  const Eigen::Index ode_out = s.second_order() ? s.latent_dim / 2 : s.latent_dim;
  ode_ = Mlp(params_, "ode", widths_of(ode_in, s.ode_hidden, ode_out), Activation::Tanh,
             Activation::Identity, rng);

  if (s.latent_only()) {
    const Eigen::Index observed = s.second_order() ? s.latent_dim / 2 : s.latent_dim;
    decoder_out_ = make_linear(params_, "decoder.out", observed, s.obs_dim, rng);
  } else {
    decoder_ = Mlp(params_, "decoder.h", widths_of(ode_in, s.decoder_hidden, s.decoder_features),
                   Activation::Relu, Activation::Identity, rng);
    decoder_out_ =
        make_linear(params_, "decoder.out", s.latent_dim + s.decoder_features, s.obs_dim, rng);
  }
}

Var Model::encode(Tape& tape, const Var& points) const {
  if (points.cols() != 1 + spec_.obs_dim) {
    throw ShapeError("encode: expected rows of [t, y] with " + std::to_string(1 + spec_.obs_dim) +
                     " columns");
  }
  return encoder_.forward(tape, points);
}

PosteriorVars Model::heads(Tape& tape, const Var& encoded,
                           const std::vector<std::vector<Eigen::Index>>& groups,
                           const Var& y0) const {
  const Var r = group_mean(encoded, groups);
  const Var h = relu(to_hidden_.forward(tape, r));
  PosteriorVars out;
  out.d_mu = d_mu_.forward(tape, h);
  out.d_sigma = sigma_head(tape, d_sigma_, h);
  if (spec_.is_np()) return out;

  Var hl = h;
  if (spec_.y0_always_in_context) {
    if (!y0.defined() || y0.rows() != r.rows()) {
      throw DomainError("heads: the initial observation is required for every group");
    }
    hl = relu(y0_to_hidden_.forward(tape, y0));
  }
  out.l_mu = l_mu_.forward(tape, hl);
  out.l_sigma = sigma_head(tape, l_sigma_, hl);
  return out;
}

Var Model::derivative(Tape& tape, const Var& l, const Var& d, const Var& time) const {
  if (spec_.is_np()) throw StateError("the NP baseline has no latent dynamics");
  if (l.cols() != spec_.latent_dim || d.cols() != spec_.control_dim || time.cols() != 1 ||
      l.rows() != d.rows() || l.rows() != time.rows()) {
    throw ShapeError("derivative: latent/control/time shapes do not match the spec");
  }
  const Var f = ode_.forward(tape, concat_cols({l, d, time}));
  if (!spec_.second_order()) return f;
  const Eigen::Index half = spec_.latent_dim / 2;
  return concat_cols({slice_cols(l, half, half), f});
}

Var Model::decode_mean(Tape& tape, const Var& l, const Var& d, const Var& time) const {
  if (spec_.is_np()) {
    if (d.cols() != spec_.z_dim || time.cols() != 1 || d.rows() != time.rows()) {
      throw ShapeError("decode: z/time shapes do not match the spec");
    }
    return decoder_.forward(tape, concat_cols({time, d}));
  }
  if (l.cols() != spec_.latent_dim) throw ShapeError("decode: latent width does not match the spec");
  if (spec_.latent_only()) {
    const Var observed = spec_.second_order() ? slice_cols(l, 0, spec_.latent_dim / 2) : l;
    return decoder_out_.forward(tape, observed);
  }
  if (d.cols() != spec_.control_dim || time.cols() != 1 || d.rows() != l.rows() ||
      time.rows() != l.rows()) {
    throw ShapeError("decode: control/time shapes do not match the spec");
  }
  const Var h = decoder_.forward(tape, concat_cols({l, d, time}));
  return decoder_out_.forward(tape, concat_cols({l, h}));
}

BatchTrajectory Model::integrate(Tape& tape, const Var& l0, const Var& d,
                                 const TimeGrid& grid) const {
  const OdeFunc f = [this, &tape](const Var& state, const Var& cond, const Var& time) {
    return derivative(tape, state, cond, time);
  };
  return batch_integrate(f, l0, d, grid);
}

// ---------------------------------------------------------------- helpers

Mat context_points(const ContextSet& ctx) {
  Mat points(static_cast<Eigen::Index>(ctx.size()), 1 + ctx.y.cols());
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    points(r, 0) = ctx.t[i];
    points.row(r).tail(ctx.y.cols()) = ctx.y.row(r);
  }
  return points;
}

std::vector<Eigen::Index> canonical_order(const ContextSet& ctx) {
  std::vector<Eigen::Index> order(ctx.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto ua = static_cast<std::size_t>(a);
    const auto ub = static_cast<std::size_t>(b);
    if (ctx.t[ua] != ctx.t[ub]) return ctx.t[ua] < ctx.t[ub];
    for (Eigen::Index j = 0; j < ctx.y.cols(); ++j) {
      if (ctx.y(a, j) != ctx.y(b, j)) return ctx.y(a, j) < ctx.y(b, j);
    }
    return false;
  });
  return order;
}

std::optional<Eigen::Index> initial_observation(const ContextSet& ctx, double t0) {
  for (Eigen::Index i : canonical_order(ctx)) {
    if (ctx.t[static_cast<std::size_t>(i)] == t0) return i;
  }
  return std::nullopt;
}

namespace {

void check_context(const Model& model, const ContextSet& ctx) {
  if (ctx.empty()) throw DomainError("empty context set; use prior mode to sample without a context");
  if (ctx.y.rows() != static_cast<Eigen::Index>(ctx.size()) || ctx.y.cols() != model.spec().obs_dim) {
    throw ShapeError("context values must be " + std::to_string(ctx.size()) + " x " +
                     std::to_string(model.spec().obs_dim));
  }
}

PosteriorVars posterior_vars(Tape& tape, const Model& model, const ContextSet& ctx) {
  check_context(model, ctx);
  const Var encoded = model.encode(tape, constant(context_points(ctx)));
  const auto order = canonical_order(ctx);
  Var y0;
  if (model.spec().y0_always_in_context && !model.spec().is_np()) {
    const auto idx = initial_observation(ctx, model.spec().t0);
    if (!idx) throw DomainError("context lacks the initial observation at t0");
    y0 = constant(Mat(ctx.y.row(*idx)));
  }
  return model.heads(tape, encoded, {order}, y0);
}

Vec row_vec(const Var& v) { return v.value().row(0).transpose(); }

}  // namespace

Vec encode_aggregate(const Model& model, const ContextSet& ctx) {
  check_context(model, ctx);
  Tape tape = Tape::inference(model.params());
  const Var encoded = model.encode(tape, constant(context_points(ctx)));
  return row_vec(group_mean(encoded, {canonical_order(ctx)}));
}

Posterior infer_posterior(const Model& model, const ContextSet& ctx) {
  Tape tape = Tape::inference(model.params());
  const PosteriorVars pv = posterior_vars(tape, model, ctx);
  Posterior post;
  post.d = {row_vec(pv.d_mu), row_vec(pv.d_sigma)};
  if (!model.spec().is_np()) post.l = {row_vec(pv.l_mu), row_vec(pv.l_sigma)};
  return post;
}

Vec latent_derivative(const Model& model, const Vec& l, const Vec& d, double t) {
  Tape tape = Tape::inference(model.params());
  const Var out = model.derivative(tape, constant(Mat(l.transpose())), constant(Mat(d.transpose())),
                                   constant(t));
  return row_vec(out);
}

DiagGaussian decode(const Model& model, const Vec& l, const Vec& d, double t) {
  Tape tape = Tape::inference(model.params());
  const Var lv = model.spec().is_np() ? Var{} : constant(Mat(l.transpose()));
  const Var mean = model.decode_mean(tape, lv, constant(Mat(d.transpose())), constant(t));
  DiagGaussian out;
  out.mu = row_vec(mean);
  out.sigma = Vec::Constant(model.spec().obs_dim, model.spec().obs_sigma);
  return out;
}

std::vector<LatentSample> sample_latents(const Posterior& posterior, int count,
                                         std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<LatentSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int k = 0; k < count; ++k) {
    LatentSample s;
    if (posterior.l.dim() > 0) {
      Vec noise(posterior.l.dim());
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
      s.l0 = reparam_sample(posterior.l, noise);
    }
    Vec noise(posterior.d.dim());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
    s.d = reparam_sample(posterior.d, noise);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Mat> decode_latents(const Model& model, std::span<const LatentSample> latents,
                                std::span<const double> times) {
  const ModelSpec& spec = model.spec();
  const auto batch = static_cast<Eigen::Index>(latents.size());
  if (batch == 0) return {};
  const TimeGrid grid = prepare_times(times, spec.t0, spec.step);

  Mat d(batch, spec.global_dim());
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (latents[static_cast<std::size_t>(b)].d.size() != spec.global_dim()) {
      throw ShapeError("latent sample has the wrong global dimension");
    }
    d.row(b) = latents[static_cast<std::size_t>(b)].d.transpose();
  }

  Tape tape = Tape::inference(model.params());
  // Rows are slot-major: row slot * batch + b.
  const Eigen::Index rows = static_cast<Eigen::Index>(grid.size()) * batch;
  std::vector<Eigen::Index> batch_of_row(static_cast<std::size_t>(rows));
  std::vector<double> time_of_row(static_cast<std::size_t>(rows));
  for (std::size_t s = 0; s < grid.size(); ++s) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto r = static_cast<std::size_t>(s) * static_cast<std::size_t>(batch) +
                     static_cast<std::size_t>(b);
      batch_of_row[r] = b;
      time_of_row[r] = grid.times[s];
    }
  }
  const Var d_var = constant(d);
  const Var d_rows = gather_rows(d_var, batch_of_row);
  const Var t_rows = column(time_of_row);

  Var decoded;
  if (spec.is_np()) {
    decoded = model.decode_mean(tape, Var{}, d_rows, t_rows);
  } else {
    Mat l0(batch, spec.latent_dim);
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (latents[static_cast<std::size_t>(b)].l0.size() != spec.latent_dim) {
        throw ShapeError("latent sample has the wrong latent dimension");
      }
      l0.row(b) = latents[static_cast<std::size_t>(b)].l0.transpose();
    }
    const BatchTrajectory traj = model.integrate(tape, constant(l0), d_var, grid);
    decoded = model.decode_mean(tape, traj.states, d_rows, t_rows);
  }

  std::vector<Mat> out(static_cast<std::size_t>(batch), Mat(static_cast<Eigen::Index>(times.size()), spec.obs_dim));
  for (Eigen::Index b = 0; b < batch; ++b) {
    Mat& m = out[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < times.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(grid.inverse[i]) * batch + b;
      m.row(static_cast<Eigen::Index>(i)) = decoded.value().row(r);
    }
  }
  return out;
}

Posterior prior_posterior(const ModelSpec& spec) {
  Posterior post;
  post.d = {Vec::Zero(spec.global_dim()), Vec::Ones(spec.global_dim())};
  if (!spec.is_np()) post.l = {Vec::Zero(spec.latent_dim), Vec::Ones(spec.latent_dim)};
  return post;
}

namespace {

Prediction predict_impl(const Model& model, const ContextSet& ctx, std::span<const double> times,
                        const PredictOptions& options) {
  if (options.samples < 0) throw std::invalid_argument("predict: negative sample count");
  if (options.prior && !ctx.empty()) throw DomainError("prior mode takes an empty context");
  const Posterior post = options.prior ? prior_posterior(model.spec()) : infer_posterior(model, ctx);
  std::vector<LatentSample> latents;
  latents.push_back({post.l.mu, post.d.mu});
  std::mt19937_64 rng(options.seed);
  auto drawn = sample_latents(post, options.samples, rng);
  latents.insert(latents.end(), std::make_move_iterator(drawn.begin()),
                 std::make_move_iterator(drawn.end()));

  auto decoded = decode_latents(model, latents, times);
  Prediction out;
  out.times.assign(times.begin(), times.end());
  out.mean = std::move(decoded.front());
  out.samples.assign(std::make_move_iterator(decoded.begin() + 1),
                     std::make_move_iterator(decoded.end()));
  return out;
}

}  // namespace

Prediction predict(const Model& model, const ContextSet& ctx, std::span<const double> times,
                   const PredictOptions& options) {
  if (model.spec().is_np()) return np_predict(model, ctx, times, options);
  return predict_impl(model, ctx, times, options);
}

Prediction np_predict(const Model& model, const ContextSet& ctx, std::span<const double> times,
                      const PredictOptions& options) {
  if (!model.spec().is_np()) throw StateError("np_predict called on an ODE-process model");
  return predict_impl(model, ctx, times, options);
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra) {
  nlohmann::json doc;
  doc["format"] = "ndp-checkpoint";
  doc["version"] = 1;
  doc["seed"] = model.seed();
  doc["model_spec"] = to_json(model.spec());
  doc["extra"] = extra;
  doc["params"] = params_to_json(model.params());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "ndp-checkpoint") {
    throw IoError(path.string() + " is not an ndp checkpoint");
  }
  Model model(model_spec_from_json(doc.at("model_spec")), doc.at("seed").get<std::uint64_t>());
  params_from_json(doc.at("params"), model.params());
  return model;
}

}  // namespace ndp
