#pragma once

#include "ndp/tape.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ndp {

enum class Task { Sine, Exponential, Linear, Oscillator, LotkaVolterra };

std::string to_string(Task task);
/// "sine", "exponential", "linear", "oscillator", "lotka-volterra".
Task parse_task(std::string_view name);

/// One realisation: strictly increasing times with d-dimensional values.
struct TimeSeries {
  std::vector<double> times;
  Mat values;  // size() x dim()
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const { return times.size(); }
  Eigen::Index dim() const { return values.cols(); }
};

struct LotkaVolterraParams {
  double alpha = 2.0 / 3.0;
  double beta = 4.0 / 3.0;
  double gamma = 1.0;
  double delta = 1.0;
};

struct TaskSpec {
  Task task = Task::Sine;
  // 1-D families: a ~ U(a_range), b ~ U(b_range), evaluated on `points`
  // evenly spaced times over t_range (both ends included).
  std::pair<double, double> a_range{-1.0, 1.0};
  std::pair<double, double> b_range{-0.5, 0.5};
  std::pair<double, double> t_range{0.0, 5.0};
  // Lotka-Volterra: (u0, v0) = (2E, E) with E ~ U(e_range), integrated over
  // [0, lv_t_end] and stored with times divided by lv_time_scale.
  std::pair<double, double> e_range{0.25, 1.0};
  LotkaVolterraParams lv;
  double lv_t_end = 15.0;
  double lv_time_scale = 10.0;
  double lv_max_step = 0.0015;

  int points = 100;
  int train_count = 490;
  int test_count = 10;
  std::uint64_t seed = 0;

  Eigen::Index obs_dim() const { return task == Task::LotkaVolterra ? 2 : 1; }
  /// First and last stored time.
  double t_begin() const;
  double t_end() const;
};

/// Defaults for each task (ranges, counts and time windows of the standard
/// experiments).
TaskSpec default_task_spec(Task task);

nlohmann::json to_json(const TaskSpec& spec);
/// Keys absent from `doc` fall back to default_task_spec(task); unknown keys
/// throw std::invalid_argument.
TaskSpec task_spec_from_json(const nlohmann::json& doc);

/// Closed form of a 1-D task at time t.
double eval_1d(Task task, double a, double b, double t);

/// Evenly spaced grid of `points` times over [lo, hi].
std::vector<double> linspace(double lo, double hi, int points);

TimeSeries gen_1d(const TaskSpec& spec, std::mt19937_64& rng);
TimeSeries gen_lotka_volterra(const TaskSpec& spec, std::mt19937_64& rng);
/// Dispatches on spec.task.
TimeSeries generate_series(const TaskSpec& spec, std::mt19937_64& rng);

/// (du/dt, dv/dt).
std::array<double, 2> lotka_volterra_rhs(double u, double v, const LotkaVolterraParams& p);

/// delta u - gamma ln u + beta v - alpha ln v. Throws DomainError unless u, v > 0.
double conserved_quantity(double u, double v, const LotkaVolterraParams& p = {});

/// Largest |V - V0| / |V0| along a Lotka-Volterra series.
double conservation_drift(const TimeSeries& series, const LotkaVolterraParams& p = {});

struct Dataset {
  std::vector<TimeSeries> train;
  std::vector<TimeSeries> test;
};

/// Train and test series come from independent RNG streams derived from
/// spec.seed.
Dataset make_dataset(const TaskSpec& spec);

/// Independent generator for stream `stream` of `seed`.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

/// JSON-lines: one {"t": [...], "y": [[...], ...], "meta": {...}} per line.
void write_series_jsonl(const std::filesystem::path& path, std::span<const TimeSeries> series);
std::vector<TimeSeries> read_series_jsonl(const std::filesystem::path& path);

/// Writes <task>-train.jsonl, <task>-test.jsonl and <task>.spec.json.
void write_dataset(const std::filesystem::path& dir, const TaskSpec& spec, const Dataset& data);
std::filesystem::path split_path(const std::filesystem::path& dir, Task task, std::string_view split);

/// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
std::vector<Eigen::Index> choose_indices(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng);

/// Removes k points chosen uniformly at random (never the first point when
/// keep_t0 is set), preserving order. Throws DomainError when k is too large.
TimeSeries irregular_subsample(const TimeSeries& series, int k, std::mt19937_64& rng, bool keep_t0);

}  // namespace ndp
