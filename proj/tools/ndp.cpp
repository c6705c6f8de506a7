#include "ndp/active.hpp"
#include "ndp/config.hpp"
#include "ndp/data.hpp"
#include "ndp/errors.hpp"
#include "ndp/model.hpp"
#include "ndp/vi.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

std::uint64_t seed_or_env(const CLI::Option* opt, std::uint64_t value) {
  if (opt->count() > 0) return value;
  return ndp::env_seed().value_or(0);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ndp::IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ndp::IoError("cannot write " + path.string());
  out << text;
}

std::vector<ndp::TimeSeries> read_data(const fs::path& path) {
  auto series = ndp::read_series_jsonl(path);
  if (series.empty()) throw ndp::IoError(path.string() + " holds no series");
  return series;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  fs::path config;
  std::string task = "sine";
  std::uint64_t seed = 0;
  fs::path out = "data";
  int train_count = 0;
  int test_count = 0;
  int points = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* task_opt = nullptr;
};

int run_generate(const GenerateArgs& a) {
  ndp::TaskSpec spec;
  if (!a.config.empty()) {
    spec = ndp::task_spec_from_json(ndp::read_json_file(a.config));
    if (a.task_opt->count() > 0) throw ndp::ConfigError("--task conflicts with --config");
  } else {
    spec = ndp::default_task_spec(ndp::parse_task(a.task));
    spec.seed = seed_or_env(a.seed_opt, a.seed);
  }
  if (a.seed_opt->count() > 0) spec.seed = a.seed;
  if (a.train_count > 0) spec.train_count = a.train_count;
  if (a.test_count > 0) spec.test_count = a.test_count;
  if (a.points > 0) spec.points = a.points;
  const ndp::Dataset data = ndp::make_dataset(spec);
  ndp::write_dataset(a.out, spec, data);
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test series to "
            << a.out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path config;
  json flags = json::object();
};

int run_train(const TrainArgs& a) {
  json doc = a.config.empty() ? json::object() : ndp::read_json_file(a.config);
  if (!doc.is_object()) throw ndp::ConfigError("config must be a JSON object");
  const json input = doc;
  for (const auto& [key, value] : a.flags.items()) doc[key] = value;
  const ndp::RunConfig cfg = ndp::resolve_run_config(doc, ndp::env_seed().value_or(0));

  ndp::Dataset data;
  if (cfg.data_dir.empty()) {
    data = ndp::make_dataset(cfg.task);
  } else {
    data.train = read_data(ndp::split_path(cfg.data_dir, cfg.task.task, "train"));
    data.test = read_data(ndp::split_path(cfg.data_dir, cfg.task.task, "test"));
  }

  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir / "config.input.json", input.dump(2) + "\n");
  write_text(cfg.out_dir / "config.json", ndp::to_json(cfg).dump(2) + "\n");

  ndp::Model model(cfg.model, cfg.seed);
  const ndp::ParamStore initial = model.params();
  std::cout << ndp::to_string(cfg.model.variant) << " on " << ndp::to_string(cfg.task.task) << ": "
            << model.params().scalar_count() << " parameters" << std::endl;
  const auto history = ndp::train(model, data.train, data.test, cfg.train, [](const ndp::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  loss " << r.train_loss << "  test_mse " << r.test_mse << "  ("
              << std::fixed << std::setprecision(1) << r.seconds << std::defaultfloat
              << std::setprecision(6) << " s)" << std::endl;
  });
  history.write_csv(cfg.out_dir / "history.csv");

  const json extra = {{"task", ndp::to_string(cfg.task.task)}, {"epochs", history.epochs.size()},
                    {"parameters", model.params().scalar_count()}};
  ndp::save_checkpoint(cfg.out_dir / "checkpoint.json", model, extra);
  ndp::Model best(cfg.model, cfg.seed);
  best.params().assign_values(history.best_params ? *history.best_params : initial);
  json best_extra = extra;
  best_extra["best_epoch"] = history.best_epoch;
  ndp::save_checkpoint(cfg.out_dir / "best.json", best, best_extra);

  if (!history.epochs.empty()) {
    std::cout << "final test_mse " << history.epochs.back().test_mse << ", best " << history.best_test_mse
              << " at epoch " << history.best_epoch << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  int context_size = 10;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  fs::path out;
};

int run_eval(const EvalArgs& a) {
  const ndp::Model model = ndp::load_checkpoint(a.checkpoint);
  const auto series = read_data(a.data);
  const std::uint64_t seed = seed_or_env(a.seed_opt, a.seed);
  const double mse = ndp::evaluate_mse(model, series, a.context_size, seed);
  const json report = {{"checkpoint", a.checkpoint.string()}, {"data", a.data.string()},
                       {"series", series.size()},            {"context_size", a.context_size},
                       {"seed", seed},                       {"mse", mse}};
  std::cout << report.dump(2) << '\n';
  if (!a.out.empty()) write_text(a.out, report.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path checkpoint;
  fs::path series;
  int index = 0;
  std::vector<int> context_indices{0};
  int samples = 0;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  fs::path out;
};

int run_predict(const PredictArgs& a) {
  const ndp::Model model = ndp::load_checkpoint(a.checkpoint);
  const auto all = read_data(a.series);
  if (a.index < 0 || static_cast<std::size_t>(a.index) >= all.size()) {
    throw ndp::ConfigError("--index out of range: the file has " + std::to_string(all.size()) + " series");
  }
  const ndp::TimeSeries& s = all[static_cast<std::size_t>(a.index)];
  ndp::ContextSet ctx;
  ctx.y.resize(static_cast<Eigen::Index>(a.context_indices.size()), s.dim());
  for (std::size_t i = 0; i < a.context_indices.size(); ++i) {
    const int idx = a.context_indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= s.size()) {
      throw ndp::ConfigError("context index " + std::to_string(idx) + " out of range");
    }
    ctx.t.push_back(s.times[static_cast<std::size_t>(idx)]);
    ctx.y.row(static_cast<Eigen::Index>(i)) = s.values.row(idx);
  }
  ndp::PredictOptions opts;
  opts.samples = a.samples;
  opts.seed = seed_or_env(a.seed_opt, a.seed);
  const ndp::Prediction pred = ndp::predict(model, ctx, s.times, opts);

  std::ostringstream csv;
  csv << std::setprecision(17) << 't';
  const Eigen::Index dim = s.dim();
  auto suffix = [dim](Eigen::Index j) { return dim == 1 ? std::string() : "_" + std::to_string(j); };
  for (Eigen::Index j = 0; j < dim; ++j) csv << ",y" << suffix(j);
  for (Eigen::Index j = 0; j < dim; ++j) csv << ",mean" << suffix(j);
  for (std::size_t k = 0; k < pred.samples.size(); ++k) {
    for (Eigen::Index j = 0; j < dim; ++j) csv << ",sample" << k << suffix(j);
  }
  csv << '\n';
  for (std::size_t i = 0; i < pred.times.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    csv << pred.times[i];
    for (Eigen::Index j = 0; j < dim; ++j) csv << ',' << s.values(r, j);
    for (Eigen::Index j = 0; j < dim; ++j) csv << ',' << pred.mean(r, j);
    for (const ndp::Mat& m : pred.samples) {
      for (Eigen::Index j = 0; j < dim; ++j) csv << ',' << m(r, j);
    }
    csv << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(a.out, csv.str());
  }
  return 0;
}

// ---------------------------------------------------------------- active

struct ActiveArgs {
  fs::path checkpoint;
  fs::path data;
  std::string policy = "max-uncertainty";
  int steps = 10;
  int init_context = 1;
  int samples = 50;
  int series = 0;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  fs::path out = "active";
};

int run_active(const ActiveArgs& a) {
  const ndp::Model model = ndp::load_checkpoint(a.checkpoint);
  const auto all = read_data(a.data);
  const std::size_t count = a.series > 0 ? std::min(all.size(), static_cast<std::size_t>(a.series)) : all.size();
  ndp::QueryPolicy policy;
  policy.strategy = ndp::parse_query_strategy(a.policy);
  policy.samples = a.samples;
  const std::uint64_t seed = seed_or_env(a.seed_opt, a.seed);
  ensure_dir(a.out);

  std::vector<double> mean_curve(static_cast<std::size_t>(a.steps) + 1, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    policy.seed = seed + i;
    const ndp::AlRun run = ndp::active_learning_run(model, all[i], a.init_context, a.steps, policy);
    run.write_csv(a.out / ("al-" + ndp::to_string(policy.strategy) + "-" + std::to_string(i) + ".csv"));
    for (const ndp::AlStep& s : run.steps) mean_curve[static_cast<std::size_t>(s.step)] += s.mse / count;
  }
  std::ostringstream csv;
  csv << std::setprecision(17) << "step,mean_mse\n";
  for (std::size_t k = 0; k < mean_curve.size(); ++k) csv << k << ',' << mean_curve[k] << '\n';
  write_text(a.out / ("al-" + ndp::to_string(policy.strategy) + "-mean.csv"), csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-ODE stochastic process models: data, training, evaluation, active learning"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
  generate->add_option("--config", gen.config, "Task spec JSON")->check(CLI::ExistingFile);
  gen.task_opt = generate->add_option("--task", gen.task, "sine | exponential | linear | oscillator | lotka-volterra");
  gen.seed_opt = generate->add_option("--seed", gen.seed, "Dataset seed (default: NDP_SEED or 0)");
  generate->add_option("--out", gen.out, "Output directory");
  generate->add_option("--train-count", gen.train_count, "Override the number of training series");
  generate->add_option("--test-count", gen.test_count, "Override the number of test series");
  generate->add_option("--points", gen.points, "Override the points per series");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint + history");
  train->add_option("--config", tr.config, "Run config JSON (flags override it)")->check(CLI::ExistingFile);
  struct FlagSpec {
    const char* flag;
    const char* key;
    const char* help;
    enum { Int, Real, Text } kind;
  };
  const std::vector<FlagSpec> train_flags{
      {"--task", "task", "Task name", FlagSpec::Text},
      {"--model", "model", "ndp | nd2p | ndp-l | nd2p-l | np", FlagSpec::Text},
      {"--seed", "seed", "Seed for data, initialisation and training", FlagSpec::Int},
      {"--data-seed", "data_seed", "Dataset seed when generating in memory", FlagSpec::Int},
      {"--epochs", "epochs", "Training epochs", FlagSpec::Int},
      {"--batch-size", "batch_size", "Series per step", FlagSpec::Int},
      {"--latent-dim", "latent_dim", "Dimension of the ODE state", FlagSpec::Int},
      {"--control-dim", "control_dim", "Dimension of the global control", FlagSpec::Int},
      {"--context-min", "context_min", "Smallest training context", FlagSpec::Int},
      {"--context-max", "context_max", "Largest training context", FlagSpec::Int},
      {"--extra-min", "extra_min", "Fewest extra targets", FlagSpec::Int},
      {"--extra-max", "extra_max", "Most extra targets", FlagSpec::Int},
      {"--eval-context", "eval_context", "Context size at test time", FlagSpec::Int},
      {"--lr", "learning_rate", "RMSprop learning rate", FlagSpec::Real},
      {"--out", "out_dir", "Run directory", FlagSpec::Text},
      {"--data-dir", "data_dir", "Read <task>-train/test.jsonl from here", FlagSpec::Text},
  };
  std::vector<std::string> flag_values(train_flags.size());
  std::vector<CLI::Option*> flag_opts;
  for (std::size_t i = 0; i < train_flags.size(); ++i) {
    flag_opts.push_back(train->add_option(train_flags[i].flag, flag_values[i], train_flags[i].help));
  }

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Test-set MSE of a checkpoint");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  eval->add_option("--data", ev.data, "Series file (JSON lines)")->required();
  eval->add_option("--context-size", ev.context_size, "Random context points per series");
  ev.seed_opt = eval->add_option("--seed", ev.seed, "Context sampling seed (default: NDP_SEED or 0)");
  eval->add_option("--out", ev.out, "Also write the report here");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Posterior predictions for one series as CSV");
  predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint JSON")->required();
  predict->add_option("--series", pr.series, "Series file (JSON lines)")->required();
  predict->add_option("--index", pr.index, "Which series in the file");
  predict->add_option("--context-indices", pr.context_indices, "Point indices used as context")->delimiter(',');
  predict->add_option("--samples", pr.samples, "Sampled trajectories besides the mean");
  pr.seed_opt = predict->add_option("--seed", pr.seed, "Sampling seed (default: NDP_SEED or 0)");
  predict->add_option("--out", pr.out, "CSV path (default: stdout)");

  ActiveArgs ac;
  auto* active = app.add_subcommand("active", "Greedy active learning on held-out series");
  active->add_option("--checkpoint", ac.checkpoint, "Checkpoint JSON")->required();
  active->add_option("--data", ac.data, "Series file (JSON lines)")->required();
  active->add_option("--policy", ac.policy, "max-uncertainty | random");
  active->add_option("--steps", ac.steps, "Points to acquire");
  active->add_option("--init-context", ac.init_context, "Initial random context size");
  active->add_option("--samples", ac.samples, "Latent draws for the uncertainty estimate");
  active->add_option("--series", ac.series, "Use only the first N series (0 = all)");
  ac.seed_opt = active->add_option("--seed", ac.seed, "Policy seed (default: NDP_SEED or 0)");
  active->add_option("--out", ac.out, "Directory for the AlRun CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*eval) return run_eval(ev);
    if (*predict) return run_predict(pr);
    if (*active) return run_active(ac);
    for (std::size_t i = 0; i < train_flags.size(); ++i) {
      if (flag_opts[i]->count() == 0) continue;
      const auto& f = train_flags[i];
      const std::string& v = flag_values[i];
      try {
        switch (f.kind) {
          case FlagSpec::Int:
            tr.flags[f.key] = std::stoull(v);
            break;
          case FlagSpec::Real:
            tr.flags[f.key] = std::stod(v);
            break;
          case FlagSpec::Text:
            tr.flags[f.key] = v;
            break;
        }
      } catch (const std::logic_error&) {
        throw ndp::ConfigError(std::string(f.flag) + ": invalid value '" + v + "'");
      }
    }
    return run_train(tr);
  } catch (const ndp::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ndp::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ndp::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
