// End-to-end acceptance run. Trains the models the quantitative criteria
// need (5 seeds each), then runs the property suites, printing one
// PASS/FAIL line per criterion. Exit status is non-zero if any fails.

#include "gradcheck.hpp"
#include "primitive_cases.hpp"

#include "ndp/active.hpp"
#include "ndp/errors.hpp"
#include "ndp/config.hpp"
#include "ndp/vi.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

using namespace ndp;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 5;

struct Trained {
  Model model;
  double test_mse;
};

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list_of(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

TaskSpec task_for(Task task, std::uint64_t seed) {
  TaskSpec spec = default_task_spec(task);
  spec.seed = seed;
  return spec;
}

class Lab {
 public:
  explicit Lab(fs::path cache) : cache_(std::move(cache)) {
    if (!cache_.empty()) fs::create_directories(cache_);
  }

  const Dataset& data(Task task, std::uint64_t seed) {
    const auto key = std::make_pair(task, seed);
    auto it = data_.find(key);
    if (it == data_.end()) it = data_.emplace(key, make_dataset(task_for(task, seed))).first;
    return it->second;
  }

  // Trains (or reloads) one model with the task's standard protocol and the
  // given seed for data, initialisation and training noise.
  const Trained& get(Task task, Variant variant, std::uint64_t seed, Eigen::Index latent_dim = 2) {
    const std::string key = to_string(task) + "-" + to_string(variant) + "-l" + std::to_string(latent_dim) +
                            "-s" + std::to_string(seed);
    if (auto it = models_.find(key); it != models_.end()) return it->second;

    const fs::path file = cache_.empty() ? fs::path{} : cache_ / (key + ".json");
    if (!file.empty() && fs::exists(file)) {
      Model m = load_checkpoint(file);
      const double mse = read_json_file(file).at("extra").at("test_mse").get<double>();
      return models_.emplace(key, Trained{std::move(m), mse}).first->second;
    }

    ModelSpec spec = default_model_spec(task_for(task, seed), variant);
    spec.latent_dim = latent_dim;
    TrainConfig cfg = default_train_config(task);
    cfg.seed = seed;
    Model model(spec, seed);
    const Dataset& d = data(task, seed);
    const auto start = std::chrono::steady_clock::now();
    const TrainHistory h = train(model, d.train, d.test, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double mse = h.epochs.back().test_mse;
    std::cerr << "  trained " << key << ": test MSE " << fmt(mse) << " (" << fmt(secs) << " s)\n";
    if (!file.empty()) save_checkpoint(file, model, {{"test_mse", mse}});
    return models_.emplace(key, Trained{std::move(model), mse}).first->second;
  }

  std::vector<double> mses(Task task, Variant variant, Eigen::Index latent_dim = 2) {
    std::vector<double> out;
    for (int s = 1; s <= kSeeds; ++s) out.push_back(get(task, variant, static_cast<std::uint64_t>(s), latent_dim).test_mse);
    return out;
  }

 private:
  fs::path cache_;
  std::map<std::pair<Task, std::uint64_t>, Dataset> data_;
  std::map<std::string, Trained> models_;
};

// ---- quantitative

Verdict sine_vs_np(Lab& lab) {
  const auto ndp = lab.mses(Task::Sine, Variant::Ndp);
  const auto np = lab.mses(Task::Sine, Variant::Np);
  const double a = mean_of(ndp), b = mean_of(np);
  return {a <= 3.5e-2 && b >= 1.3 * a,
          "NDP " + fmt(a) + " " + list_of(ndp) + ", NP " + fmt(b) + " " + list_of(np) + ", NP/NDP " + fmt(b / a)};
}

Verdict linear_vs_np(Lab& lab) {
  const auto ndp = lab.mses(Task::Linear, Variant::Ndp);
  const auto np = lab.mses(Task::Linear, Variant::Np);
  const double a = mean_of(ndp), b = mean_of(np);
  return {a < b, "NDP " + fmt(a) + " " + list_of(ndp) + ", NP " + fmt(b) + " " + list_of(np)};
}

Verdict lotka_volterra(Lab& lab) {
  const auto ndp = lab.mses(Task::LotkaVolterra, Variant::Ndp);
  const auto np = lab.mses(Task::LotkaVolterra, Variant::Np);
  const double a = mean_of(ndp), b = mean_of(np);
  return {a <= 0.30 && a <= 0.6 * b,
          "NDP " + fmt(a) + " " + list_of(ndp) + ", NP " + fmt(b) + " " + list_of(np) + ", NDP/NP " + fmt(a / b)};
}

Verdict latent_ablation(Lab& lab) {
  const auto l2 = lab.mses(Task::Sine, Variant::Ndp, 2);
  const auto l1 = lab.mses(Task::Sine, Variant::Ndp, 1);
  const auto np = lab.mses(Task::Sine, Variant::Np);
  const double a = mean_of(l2), b = mean_of(l1), c = mean_of(np);
  return {a <= 0.6 * b && b >= 0.8 * c, "l=2 " + fmt(a) + ", l=1 " + fmt(b) + " " + list_of(l1) + ", NP " + fmt(c) +
                                            ", l2/l1 " + fmt(a / b) + ", l1/NP " + fmt(b / c)};
}

Verdict active_learning(Lab& lab) {
  constexpr int steps = 10;
  std::vector<double> uncertain(steps + 1, 0.0), random(steps + 1, 0.0);
  int runs = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    const Trained& t = lab.get(Task::Sine, Variant::Ndp, static_cast<std::uint64_t>(s));
    const auto& held_out = lab.data(Task::Sine, static_cast<std::uint64_t>(s)).test;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
      QueryPolicy policy;
      policy.seed = 1000 * static_cast<std::uint64_t>(s) + i;
      const AlRun a = active_learning_run(t.model, held_out[i], 1, steps, policy);
      policy.strategy = QueryStrategy::Random;
      const AlRun r = active_learning_run(t.model, held_out[i], 1, steps, policy);
      for (int k = 0; k <= steps; ++k) {
        uncertain[static_cast<std::size_t>(k)] += a.steps[static_cast<std::size_t>(k)].mse;
        random[static_cast<std::size_t>(k)] += r.steps[static_cast<std::size_t>(k)].mse;
      }
      ++runs;
    }
  }
  bool ok = true;
  std::string detail = std::to_string(runs) + " runs; step: uncertainty vs random";
  for (int k = 0; k <= steps; ++k) {
    const double u = uncertain[static_cast<std::size_t>(k)] / runs, r = random[static_cast<std::size_t>(k)] / runs;
    if (k > 3 && u > r) ok = false;
    detail += "; " + std::to_string(k) + ": " + fmt(u) + " vs " + fmt(r);
  }
  return {ok, detail};
}

Verdict variant_sweep(Lab& lab) {
  bool ok = true;
  std::string detail;
  for (Task task : {Task::Sine, Task::Exponential, Task::Linear, Task::Oscillator}) {
    double zero = 0.0;
    int count = 0;
    for (const auto& s : lab.data(task, 1).test) {
      zero += s.values.squaredNorm();
      count += static_cast<int>(s.values.size());
    }
    zero /= count;
    for (Variant v : {Variant::Ndp, Variant::Nd2p, Variant::NdpL, Variant::Nd2pL}) {
      std::string cell = to_string(task) + "/" + to_string(v) + " ";
      try {
        const double mse = lab.get(task, v, 1).test_mse;
        const double ratio = zero / mse;
        cell += fmt(mse) + " (zero/model " + fmt(ratio) + ")";
        if (!std::isfinite(mse)) ok = false;
        if ((task == Task::Sine || task == Task::Linear) && !(ratio >= 5.0)) ok = false;
      } catch (const DivergenceError& e) {
        cell += std::string("diverged: ") + e.what();
        ok = false;
      }
      detail += (detail.empty() ? "" : "; ") + cell;
    }
  }
  return {ok, detail};
}

// ---- properties

ContextSet random_context(std::mt19937_64& rng, const TimeSeries& s) {
  std::uniform_int_distribution<int> size(1, 10);
  const auto idx = choose_indices(static_cast<Eigen::Index>(s.size()), size(rng), rng);
  ContextSet c;
  c.y.resize(static_cast<Eigen::Index>(idx.size()), s.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    c.t.push_back(s.times[static_cast<std::size_t>(idx[i])]);
    c.y.row(static_cast<Eigen::Index>(i)) = s.values.row(idx[i]);
  }
  return c;
}

Verdict exchangeability(Lab& lab) {
  const Model& m = lab.get(Task::Sine, Variant::Ndp, 1).model;
  const auto& series = lab.data(Task::Sine, 1).test;
  std::mt19937_64 rng(71);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ContextSet ctx = random_context(rng, series[static_cast<std::size_t>(trial) % series.size()]);
    ContextSet perm = ctx;
    std::vector<Eigen::Index> order(ctx.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      perm.t[i] = ctx.t[static_cast<std::size_t>(order[i])];
      perm.y.row(static_cast<Eigen::Index>(i)) = ctx.y.row(order[i]);
    }
    const Posterior a = infer_posterior(m, ctx), b = infer_posterior(m, perm);
    const std::vector<double> times{-2.5, -0.3, 0.8, 3.0};
    PredictOptions opts;
    opts.samples = 2;
    opts.seed = static_cast<std::uint64_t>(trial);
    const Prediction pa = predict(m, ctx, times, opts), pb = predict(m, perm, times, opts);
    const bool same = a.l.mu == b.l.mu && a.l.sigma == b.l.sigma && a.d.mu == b.d.mu && a.d.sigma == b.d.sigma &&
                      pa.mean == pb.mean && pa.samples[0] == pb.samples[0] && pa.samples[1] == pb.samples[1];
    if (!same) ++bad;
  }
  return {bad == 0, std::to_string(1000 - bad) + "/1000 bit-identical"};
}

Verdict consistency(Lab& lab) {
  const Model& m = lab.get(Task::Sine, Variant::Ndp, 1).model;
  std::mt19937_64 rng(72);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> ut(-std::numbers::pi, std::numbers::pi);
  std::uniform_int_distribution<int> count(1, 30);
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    LatentSample z{Vec(m.spec().latent_dim), Vec(m.spec().control_dim)};
    for (Eigen::Index i = 0; i < z.l0.size(); ++i) z.l0[i] = n01(rng);
    for (Eigen::Index i = 0; i < z.d.size(); ++i) z.d[i] = n01(rng);
    const double t = ut(rng);
    std::vector<double> times{t};
    for (int k = count(rng); k > 0; --k) times.push_back(ut(rng));
    std::shuffle(times.begin(), times.end(), rng);
    const std::vector<LatentSample> zs{z};
    const Mat alone = decode_latents(m, zs, std::vector<double>{t}).front();
    const Mat mixed = decode_latents(m, zs, times).front();
    const auto pos = std::find(times.begin(), times.end(), t) - times.begin();
    if (alone.row(0) != mixed.row(pos)) ++bad;
  }
  return {bad == 0, std::to_string(200 - bad) + "/200 bit-identical"};
}

Verdict gradient_oracle() {
  double worst = 0.0;
  std::string where;
  int checked = 0;
  for (const auto& c : testing::primitive_cases()) {
    const auto r = testing::check_input_gradients(c.f, c.inputs);
    ++checked;
    if (r.worst > worst) {
      worst = r.worst;
      where = c.name + " " + r.where;
    }
  }
  for (Variant v : {Variant::Ndp, Variant::Nd2p, Variant::NdpL, Variant::Nd2pL, Variant::Np}) {
    ModelSpec spec;
    spec.variant = v;
    spec.encoder_hidden = {3};
    spec.r_dim = 2;
    spec.hidden_dim = 2;
    spec.latent_dim = 2;
    spec.control_dim = 1;
    spec.z_dim = 2;
    spec.ode_hidden = {3};
    spec.decoder_hidden = {3};
    spec.decoder_features = 2;
    spec.step = 0.25;
    Model m(spec, 5);
    std::mt19937_64 init(6);
    for (std::size_t id = 0; id < m.params().size(); ++id) {
      Mat& value = m.params().value(id);
      value += 0.1 * testing::random_mat(value.rows(), value.cols(), init);
    }
    TaskSpec task = default_task_spec(Task::Sine);
    task.t_range = {0.0, 2.0};
    task.points = 12;
    std::mt19937_64 data_rng(7);
    std::vector<Episode> batch;
    TrainConfig cfg;
    cfg.context_max = 4;
    cfg.extra_max = 3;
    for (int b = 0; b < 2; ++b) batch.push_back(split_context_target(gen_1d(task, data_rng), data_rng, cfg));
    const auto r = testing::check_param_gradients(
        [&](Tape& tape) {
          std::mt19937_64 rng(8);
          return batch_elbo(tape, m, batch, rng).loss;
        },
        m.params(), 1e-5);
    ++checked;
    if (r.worst > worst) {
      worst = r.worst;
      where = "ELBO/" + to_string(v) + " " + r.where;
    }
  }
  return {worst <= 1e-3, std::to_string(checked) + " checks, worst relative error " + fmt(worst) +
                             (where.empty() ? "" : " at " + where)};
}

Verdict kl_properties() {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> um(-3.0, 3.0), us(0.05, 3.0);
  std::uniform_int_distribution<int> dim(1, 6);
  auto draw = [&](int k) {
    DiagGaussian g{Vec(k), Vec(k)};
    for (int i = 0; i < k; ++i) {
      g.mu[i] = um(rng);
      g.sigma[i] = us(rng);
    }
    return g;
  };
  int negative = 0, self_nonzero = 0, distinct_zero = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const int k = dim(rng);
    const DiagGaussian q = draw(k), p = draw(k);
    const double kl = kl_diag(q, p);
    if (kl < 0.0) ++negative;
    if (kl == 0.0) ++distinct_zero;
    if (kl_diag(q, q) != 0.0) ++self_nonzero;
  }
  std::normal_distribution<double> n01;
  int outside = 0;
  double worst_z = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    const int k = dim(rng);
    const DiagGaussian q = draw(k), p = draw(k);
    double acc = 0.0, acc2 = 0.0;
    constexpr int draws = 1000000;
    for (int n = 0; n < draws; ++n) {
      double term = 0.0;
      for (int i = 0; i < k; ++i) {
        const double e = n01(rng);
        const double x = q.mu[i] + q.sigma[i] * e;
        const double zp = (x - p.mu[i]) / p.sigma[i];
        term += -0.5 * e * e - std::log(q.sigma[i]) + 0.5 * zp * zp + std::log(p.sigma[i]);
      }
      acc += term;
      acc2 += term * term;
    }
    const double mc = acc / draws;
    const double se = std::sqrt((acc2 / draws - mc * mc) / draws);
    const double z = std::abs(kl_diag(q, p) - mc) / se;
    worst_z = std::max(worst_z, z);
    if (z > 3.0) ++outside;
  }
  return {negative == 0 && self_nonzero == 0 && distinct_zero == 0 && outside == 0,
          "negative " + std::to_string(negative) + ", KL(q,q) != 0: " + std::to_string(self_nonzero) +
              ", zero for distinct pairs " + std::to_string(distinct_zero) + ", MC pairs beyond 3 SE " +
              std::to_string(outside) + "/20 (worst " + fmt(worst_z) + " SE)"};
}

Verdict conservation(Lab& lab) {
  double worst = 0.0;
  int series = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    const Dataset& d = lab.data(Task::LotkaVolterra, static_cast<std::uint64_t>(s));
    for (const auto* split : {&d.train, &d.test}) {
      for (const auto& ts : *split) {
        worst = std::max(worst, conservation_drift(ts));
        ++series;
      }
    }
  }
  return {worst <= 1e-4, std::to_string(series) + " series, worst relative drift " + fmt(worst)};
}

Verdict np_degeneracy(Lab& lab) {
  bool ok = true;
  std::string detail;
  for (Variant v : {Variant::NdpL}) {
    Model m = lab.get(Task::Sine, v, 1).model;
    const std::string last = "ode." + std::to_string(m.spec().ode_hidden.size());
    m.params().value(m.params().id(last + ".weight")).setZero();
    m.params().value(m.params().id(last + ".bias")).setZero();
    std::mt19937_64 rng(74);
    int bad = 0;
    const auto& series = lab.data(Task::Sine, 1).test;
    for (std::size_t i = 0; i < series.size(); ++i) {
      PredictOptions opts;
      opts.samples = 5;
      opts.seed = i;
      const Prediction p = predict(m, random_context(rng, series[i]), series[i].times, opts);
      if (!(p.mean.array() == p.mean(0, 0)).all()) ++bad;
      for (const Mat& s : p.samples) {
        if (!(s.array() == s(0, 0)).all()) ++bad;
      }
    }
    if (bad) ok = false;
    detail += to_string(v) + " (trained on sine, field zeroed): " + std::to_string(bad) +
              " non-constant trajectories out of " + std::to_string(series.size() * 6);
  }
  return {ok, detail};
}

Verdict rk4_order() {
  auto error = [](double t, double h) {
    const OdeFunc f = [](const Var& l, const Var&, const Var&) { return l; };
    const TimeGrid g = prepare_times(std::vector<double>{t}, 0.0, h);
    return std::abs(rk4_integrate(f, constant(Mat{{1.0}}), Var{}, g).value()(0, 0) - std::exp(t));
  };
  const double r1 = error(1.0, 0.1) / error(1.0, 0.05);
  const double r2 = error(1.37, 0.1) / error(1.37, 0.05);
  return {r1 >= 12.0 && r2 >= 12.0, "error ratio at t=1: " + fmt(r1) + ", at t=1.37: " + fmt(r2)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::vector<int> only;
  std::string cache;
  app.add_option("criteria", only, "Run only these criteria (1-13)");
  app.add_option("--cache", cache, "Directory for trained checkpoints, reused across runs");
  CLI11_PARSE(app, argc, argv);

  Lab lab{fs::path(cache)};
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"sine: NDP vs NP", [&] { return sine_vs_np(lab); }},
      {"linear: NDP vs NP", [&] { return linear_vs_np(lab); }},
      {"Lotka-Volterra: NDP vs NP", [&] { return lotka_volterra(lab); }},
      {"latent-dimension ablation", [&] { return latent_ablation(lab); }},
      {"active learning ordering", [&] { return active_learning(lab); }},
      {"variant sweep", [&] { return variant_sweep(lab); }},
      {"exchangeability", [&] { return exchangeability(lab); }},
      {"consistency", [&] { return consistency(lab); }},
      {"gradient oracle", [] { return gradient_oracle(); }},
      {"KL properties", [] { return kl_properties(); }},
      {"Lotka-Volterra conservation", [&] { return conservation(lab); }},
      {"NP degeneracy", [&] { return np_degeneracy(lab); }},
      {"RK4 order", [] { return rk4_order(); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    std::cerr << "criterion " << number << " (" << criteria[i].first << ")...\n";
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << number << " (" << criteria[i].first
              << "): " << v.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
