#include "doctest.h"

#include "gradcheck.hpp"
#include "primitive_cases.hpp"

#include "ndp/errors.hpp"
#include "ndp/vi.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace ndp;
using ndp::testing::random_mat;

namespace {

ModelSpec toy_spec(Variant v) {
  ModelSpec s;
  s.variant = v;
  s.encoder_hidden = {3};
  s.r_dim = 2;
  s.hidden_dim = 2;
  s.latent_dim = 2;
  s.control_dim = 1;
  s.z_dim = 2;
  s.ode_hidden = {3};
  s.decoder_hidden = {3};
  s.decoder_features = 2;
  s.t0 = 0.0;
  s.step = 0.25;
  return s;
}

TimeSeries sine_series(double a, double b, int points = 12) {
  TimeSeries s;
  s.times = linspace(0.0, 2.0, points);
  s.values.resize(points, 1);
  for (int i = 0; i < points; ++i) s.values(i, 0) = a * std::sin(s.times[static_cast<std::size_t>(i)] - b);
  return s;
}

ContextSet take(const TimeSeries& s, std::initializer_list<Eigen::Index> idx) {
  ContextSet c;
  c.y.resize(static_cast<Eigen::Index>(idx.size()), s.dim());
  Eigen::Index row = 0;
  for (Eigen::Index i : idx) {
    c.t.push_back(s.times[static_cast<std::size_t>(i)]);
    c.y.row(row++) = s.values.row(i);
  }
  return c;
}

double log_normal(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

void zero_decoder(Model& m) {
  const std::string name = m.spec().is_np() ? "decoder.1" : "decoder.out";
  m.params().value(m.params().id(name + ".weight")).setZero();
  m.params().value(m.params().id(name + ".bias")).setZero();
}

}  // namespace

TEST_CASE("KL of diagonal Gaussians: closed-form examples") {
  const DiagGaussian q{Vec{{1.0}}, Vec{{1.0}}};
  const DiagGaussian p{Vec{{0.0}}, Vec{{1.0}}};
  CHECK(kl_diag(q, p) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl_diag(q, q) == 0.0);
  // log(1/2) + 4/2 - 1/2
  const DiagGaussian wide{Vec{{0.0}}, Vec{{2.0}}};
  CHECK(kl_diag(wide, p) == doctest::Approx(1.5 - std::log(2.0)).epsilon(1e-14));
  // Dimensions add.
  const DiagGaussian q2{Vec{{1.0, 0.0}}, Vec{{1.0, 2.0}}};
  const DiagGaussian p2{Vec{{0.0, 0.0}}, Vec{{1.0, 1.0}}};
  CHECK(kl_diag(q2, p2) == doctest::Approx(2.0 - std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("KL of diagonal Gaussians: properties and a Monte Carlo oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> um(-2.0, 2.0), us(0.2, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec qm(3), qs(3), pm(3), ps(3);
    for (int i = 0; i < 3; ++i) {
      qm[i] = um(rng);
      qs[i] = us(rng);
      pm[i] = um(rng);
      ps[i] = us(rng);
    }
    CHECK(kl_diag({qm, qs}, {pm, ps}) >= 0.0);
    CHECK(kl_diag({qm, qs}, {qm, qs}) == 0.0);
  }
  const Vec qm{{0.3, -1.2}}, qs{{0.7, 1.3}}, pm{{-0.4, 0.5}}, ps{{1.1, 0.6}};
  std::normal_distribution<double> n01;
  const int draws = 400000;
  double acc = 0.0, acc2 = 0.0;
  for (int k = 0; k < draws; ++k) {
    double term = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double x = qm[i] + qs[i] * n01(rng);
      term += log_normal(x, qm[i], qs[i]) - log_normal(x, pm[i], ps[i]);
    }
    acc += term;
    acc2 += term * term;
  }
  const double mc = acc / draws;
  const double stderr_mc = std::sqrt((acc2 / draws - mc * mc) / draws);
  CHECK(std::abs(kl_diag({qm, qs}, {pm, ps}) - mc) < 5.0 * stderr_mc);
}

TEST_CASE("KL validates its inputs") {
  const DiagGaussian ok{Vec{{0.0}}, Vec{{1.0}}};
  CHECK_THROWS_AS(kl_diag({Vec{{0.0}}, Vec{{0.0}}}, ok), DomainError);
  CHECK_THROWS_AS(kl_diag(ok, {Vec{{0.0}}, Vec{{-1.0}}}), DomainError);
  CHECK_THROWS_AS(kl_diag(ok, {Vec{{0.0, 1.0}}, Vec{{1.0, 1.0}}}), ShapeError);
}

TEST_CASE("in-graph KL agrees with the value version and differentiates") {
  std::mt19937_64 rng(2);
  const Mat qm = random_mat(3, 2, rng), pm = random_mat(3, 2, rng);
  const Mat qs = (random_mat(3, 2, rng).array().abs() + 0.3).matrix();
  const Mat ps = (random_mat(3, 2, rng).array().abs() + 0.3).matrix();
  const Mat rows = kl_diag(constant(qm), constant(qs), constant(pm), constant(ps)).value();
  for (Eigen::Index r = 0; r < 3; ++r) {
    const double v = kl_diag({qm.row(r).transpose(), qs.row(r).transpose()},
                             {pm.row(r).transpose(), ps.row(r).transpose()});
    CHECK(rows(r, 0) == doctest::Approx(v).epsilon(1e-13));
  }
  const auto report = testing::check_input_gradients(
      [](Tape&, const std::vector<Var>& v) { return sum(kl_diag(v[0], v[1], v[2], v[3])); }, {qm, qs, pm, ps});
  CAPTURE(report.where);
  CHECK(report.ok());
}

TEST_CASE("Gaussian log-likelihood") {
  const double peak = -std::log(0.1) - 0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(gaussian_loglik(Vec{{0.3}}, Vec{{0.3}}, 0.1) == doctest::Approx(peak).epsilon(1e-15));
  CHECK(gaussian_loglik(Vec{{0.4, 0.0}}, Vec{{0.3, 0.0}}, 0.1) == doctest::Approx(2.0 * peak - 0.5).epsilon(1e-14));
  const Mat nll = gaussian_nll(constant(Mat{{0.4, 1.0}}), constant(Mat{{0.3, 1.0}}), 0.1).value();
  CHECK(nll(0, 0) == doctest::Approx(-peak + 0.5).epsilon(1e-14));
  CHECK(nll(0, 1) == doctest::Approx(-peak).epsilon(1e-14));
}

TEST_CASE("context equal to target gives exactly zero KL") {
  for (Variant v : {Variant::Ndp, Variant::Nd2p, Variant::NdpL, Variant::Nd2pL, Variant::Np}) {
    const Model m(toy_spec(v), 3);
    const TimeSeries s = sine_series(0.8, 0.2);
    const ContextSet all = take(s, {4, 1, 7, 2});
    Tape tape = Tape::inference(m.params());
    std::mt19937_64 rng(1);
    const std::vector<Episode> batch{{all, all}};
    const ElboTerms terms = batch_elbo(tape, m, batch, rng);
    CHECK(terms.kl_l.value()(0, 0) == 0.0);
    CHECK(terms.kl_d.value()(0, 0) == 0.0);
  }
}

TEST_CASE("a perfect mean pays only the Gaussian normaliser") {
  Model m(toy_spec(Variant::Ndp), 3);
  zero_decoder(m);
  TimeSeries s = sine_series(0.0, 0.0, 6);
  const ContextSet all = take(s, {0, 1, 2, 3, 4, 5});
  std::mt19937_64 rng(1);
  const double per_point = std::log(0.1) + 0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(elbo_loss(m, all, all, rng) == doctest::Approx(6.0 * per_point).epsilon(1e-13));
}

TEST_CASE("C must be a subset of T") {
  const Model m(toy_spec(Variant::Ndp), 3);
  const TimeSeries s = sine_series(0.8, 0.2);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(elbo_loss(m, take(s, {1, 9}), take(s, {1, 2, 3}), rng), DomainError);
  CHECK_NOTHROW(elbo_loss(m, take(s, {3, 1}), take(s, {1, 2, 3}), rng));
}

TEST_CASE("a batch loss is the mean of the single-series losses under the same noise") {
  for (Variant v : {Variant::Ndp, Variant::Nd2p, Variant::Np}) {
    const Model m(toy_spec(v), 8);
    const TimeSeries s1 = sine_series(0.8, 0.2);
    const TimeSeries s2 = sine_series(-0.5, -0.3);
    const std::vector<Episode> batch{{take(s1, {2, 5}), take(s1, {2, 5, 9, 11})},
                                     {take(s2, {0}), take(s2, {0, 3, 6})}};
    std::mt19937_64 rng(4);
    Tape tape = Tape::inference(m.params());
    const double joint = batch_elbo(tape, m, batch, rng).loss.value()(0, 0);
    std::mt19937_64 rng2(4);
    const double a = elbo_loss(m, batch[0].context, batch[0].target, rng2);
    const double b = elbo_loss(m, batch[1].context, batch[1].target, rng2);
    CHECK(joint == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
  }
}

TEST_CASE("ELBO parameter gradients match finite differences") {
  for (Variant v : {Variant::Ndp, Variant::Nd2p, Variant::NdpL, Variant::Nd2pL, Variant::Np}) {
    for (bool y0 : {false, true}) {
      if (v == Variant::Np && y0) continue;
      CAPTURE(to_string(v));
      CAPTURE(y0);
      ModelSpec spec = toy_spec(v);
      spec.y0_always_in_context = y0;
      Model m(spec, 17);
      // Non-zero biases so every parameter carries a gradient.
      std::mt19937_64 init(9);
      for (std::size_t id = 0; id < m.params().size(); ++id) {
        Mat& value = m.params().value(id);
        value += 0.1 * random_mat(value.rows(), value.cols(), init);
      }
      const TimeSeries s1 = sine_series(0.8, 0.2);
      const TimeSeries s2 = sine_series(-0.5, -0.3);
      const std::vector<Episode> batch{{take(s1, {0, 5}), take(s1, {0, 5, 9, 3})},
                                       {take(s2, {0, 4}), take(s2, {0, 4, 7})}};
      const auto report = testing::check_param_gradients(
          [&](Tape& tape) {
            std::mt19937_64 rng(6);
            return batch_elbo(tape, m, batch, rng).loss;
          },
          m.params(), 1e-5);
      CAPTURE(report.where);
      CHECK(report.ok());
    }
  }
}

TEST_CASE("context/target splits") {
  const TimeSeries s = sine_series(1.0, 0.0, 40);
  TrainConfig cfg;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Episode e = split_context_target(s, rng, cfg);
    const auto m = static_cast<int>(e.context.size());
    const auto n = static_cast<int>(e.target.size()) - m;
    CHECK(m >= cfg.context_min);
    CHECK(m <= cfg.context_max);
    CHECK(n >= cfg.extra_min);
    CHECK(n <= cfg.extra_max);
    const std::set<double> distinct(e.target.t.begin(), e.target.t.end());
    CHECK(distinct.size() == e.target.size());
    for (std::size_t i = 0; i < e.context.size(); ++i) {
      CHECK(e.context.t[i] == e.target.t[i]);
      CHECK(e.context.y.row(static_cast<Eigen::Index>(i)) == e.target.y.row(static_cast<Eigen::Index>(i)));
    }
  }
  SUBCASE("the first observation can be forced into the context") {
    cfg.force_initial = true;
    for (int trial = 0; trial < 50; ++trial) {
      const Episode e = split_context_target(s, rng, cfg);
      CHECK(std::find(e.context.t.begin(), e.context.t.end(), s.times[0]) != e.context.t.end());
    }
  }
  SUBCASE("extra points are cut to fit a short series") {
    cfg.context_min = 8;
    cfg.context_max = 10;
    cfg.extra_min = 0;
    cfg.extra_max = 5;
    const TimeSeries short_series = sine_series(1.0, 0.0, 11);
    for (int trial = 0; trial < 50; ++trial) {
      CHECK(split_context_target(short_series, rng, cfg).target.size() <= 11);
    }
    CHECK_THROWS_AS(split_context_target(sine_series(1.0, 0.0, 9), rng, cfg), DomainError);
  }
}

TEST_CASE("train config validation and defaults") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.context_min = 11;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  const TrainConfig lv = default_train_config(Task::LotkaVolterra);
  CHECK(lv.context_max == 100);
  CHECK(lv.extra_max == 45);
  const ModelSpec spec = default_model_spec(default_task_spec(Task::Sine), Variant::Ndp);
  CHECK(spec.t0 == -std::numbers::pi);
  CHECK(spec.step == doctest::Approx(2.0 * std::numbers::pi / 100.0).epsilon(1e-15));
  CHECK(default_model_spec(default_task_spec(Task::LotkaVolterra), Variant::Ndp).obs_dim == 2);
}

TEST_CASE("mean-mode MSE of a zero decoder is the mean square of the data") {
  Model m(toy_spec(Variant::Ndp), 2);
  zero_decoder(m);
  const std::vector<TimeSeries> data{sine_series(0.8, 0.2), sine_series(-0.5, 0.1)};
  double acc = 0.0;
  int count = 0;
  for (const auto& s : data) {
    acc += s.values.squaredNorm();
    count += static_cast<int>(s.values.size());
  }
  CHECK(evaluate_mse(m, data, 3, 1) == doctest::Approx(acc / count).epsilon(1e-13));
}

TEST_CASE("training") {
  const ModelSpec spec = toy_spec(Variant::Ndp);
  std::vector<TimeSeries> data;
  for (int i = 0; i < 7; ++i) data.push_back(sine_series(0.2 * i - 0.6, 0.05 * i));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.context_max = 6;
  cfg.eval_context = 4;

  SUBCASE("zero epochs leaves parameters untouched") {
    Model m(spec, 1);
    const Model fresh(spec, 1);
    cfg.epochs = 0;
    const TrainHistory h = train(m, data, data, cfg);
    CHECK(h.epochs.empty());
    for (std::size_t id = 0; id < m.params().size(); ++id) CHECK(m.params().value(id) == fresh.params().value(id));
  }
  SUBCASE("runs are reproducible and record every epoch") {
    Model a(spec, 1), b(spec, 1);
    int calls = 0;
    const TrainHistory ha = train(a, data, data, cfg, [&](const EpochRecord&) { ++calls; });
    const TrainHistory hb = train(b, data, data, cfg);
    CHECK(calls == 2);
    REQUIRE(ha.epochs.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
      CHECK(ha.epochs[e].epoch == static_cast<int>(e) + 1);
      CHECK(ha.epochs[e].train_loss == hb.epochs[e].train_loss);
      CHECK(ha.epochs[e].test_mse == hb.epochs[e].test_mse);
    }
    for (std::size_t id = 0; id < a.params().size(); ++id) CHECK(a.params().value(id) == b.params().value(id));
    REQUIRE(ha.best_params.has_value());
    CHECK(ha.best_test_mse == std::min(ha.epochs[0].test_mse, ha.epochs[1].test_mse));
    CHECK(evaluate_mse(a, data, cfg.eval_context, cfg.eval_seed) == ha.epochs.back().test_mse);

    std::ostringstream csv;
    ha.write_csv(csv);
    CHECK(csv.str().rfind("epoch,train_loss,test_mse,seconds\n", 0) == 0);
  }
  SUBCASE("a different seed gives a different run") {
    Model a(spec, 1), b(spec, 1);
    train(a, data, data, cfg);
    cfg.seed = 6;
    train(b, data, data, cfg);
    CHECK(a.params().value(0) != b.params().value(0));
  }
}
