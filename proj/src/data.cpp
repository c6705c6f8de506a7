#include "ndp/data.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace ndp {

std::string to_string(Task task) {
  switch (task) {
    case Task::Sine:
      return "sine";
    case Task::Exponential:
      return "exponential";
    case Task::Linear:
      return "linear";
    case Task::Oscillator:
      return "oscillator";
    case Task::LotkaVolterra:
      return "lotka-volterra";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "sine" || s == "sines") return Task::Sine;
  if (s == "exponential" || s == "exponentials") return Task::Exponential;
  if (s == "linear" || s == "lines") return Task::Linear;
  if (s == "oscillator" || s == "oscillators") return Task::Oscillator;
  if (s == "lotka-volterra" || s == "lv") return Task::LotkaVolterra;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

double TaskSpec::t_begin() const {
  return task == Task::LotkaVolterra ? 0.0 : t_range.first;
}

double TaskSpec::t_end() const {
  return task == Task::LotkaVolterra ? lv_t_end / lv_time_scale : t_range.second;
}

TaskSpec default_task_spec(Task task) {
  TaskSpec s;
  s.task = task;
  switch (task) {
    case Task::Sine:
      s.t_range = {-std::numbers::pi, std::numbers::pi};
      break;
    case Task::Exponential:
      s.t_range = {-1.0, 4.0};
      break;
    case Task::Linear:
    case Task::Oscillator:
      s.t_range = {0.0, 5.0};
      break;
    case Task::LotkaVolterra:
      s.train_count = 40;
      s.test_count = 10;
      break;
  }
  return s;
}

nlohmann::json to_json(const TaskSpec& s) {
  return {{"task", to_string(s.task)},
          {"a_range", {s.a_range.first, s.a_range.second}},
          {"b_range", {s.b_range.first, s.b_range.second}},
          {"t_range", {s.t_range.first, s.t_range.second}},
          {"e_range", {s.e_range.first, s.e_range.second}},
          {"lv_params", {{"alpha", s.lv.alpha}, {"beta", s.lv.beta}, {"gamma", s.lv.gamma}, {"delta", s.lv.delta}}},
          {"lv_t_end", s.lv_t_end},
          {"lv_time_scale", s.lv_time_scale},
          {"lv_max_step", s.lv_max_step},
          {"points", s.points},
          {"train_count", s.train_count},
          {"test_count", s.test_count},
          {"seed", s.seed}};
}

namespace {

std::pair<double, double> range_of(const nlohmann::json& v) {
  const auto r = v.get<std::vector<double>>();
  if (r.size() != 2 || !(r[0] <= r[1])) throw std::invalid_argument("a range needs [lo, hi] with lo <= hi");
  return {r[0], r[1]};
}

}  // namespace

TaskSpec task_spec_from_json(const nlohmann::json& doc) {
  TaskSpec s = default_task_spec(parse_task(doc.value("task", std::string("sine"))));
  for (const auto& [key, value] : doc.items()) {
    if (key == "task") continue;
    if (key == "a_range") s.a_range = range_of(value);
    else if (key == "b_range") s.b_range = range_of(value);
    else if (key == "t_range") s.t_range = range_of(value);
    else if (key == "e_range") s.e_range = range_of(value);
    else if (key == "lv_params") {
      for (const auto& [k, v] : value.items()) {
        if (k == "alpha") s.lv.alpha = v.get<double>();
        else if (k == "beta") s.lv.beta = v.get<double>();
        else if (k == "gamma") s.lv.gamma = v.get<double>();
        else if (k == "delta") s.lv.delta = v.get<double>();
        else throw std::invalid_argument("unknown lv_params key '" + k + "'");
      }
    } else if (key == "lv_t_end") s.lv_t_end = value.get<double>();
    else if (key == "lv_time_scale") s.lv_time_scale = value.get<double>();
    else if (key == "lv_max_step") s.lv_max_step = value.get<double>();
    else if (key == "points") s.points = value.get<int>();
    else if (key == "train_count") s.train_count = value.get<int>();
    else if (key == "test_count") s.test_count = value.get<int>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("unknown task spec key '" + key + "'");
  }
  return s;
}

double eval_1d(Task task, double a, double b, double t) {
  switch (task) {
    case Task::Sine:
      return a * std::sin(t - b);
    case Task::Exponential:
      return a / 60.0 * std::exp(t - b);
    case Task::Linear:
      return a * t + b;
    case Task::Oscillator:
      return a * std::sin(t - b) * std::exp(-t / 2.0);
    case Task::LotkaVolterra:
      break;
  }
  throw std::invalid_argument("eval_1d: not a 1-D task");
}

std::vector<double> linspace(double lo, double hi, int points) {
  if (points < 2) throw DomainError("linspace needs at least two points");
  std::vector<double> t(static_cast<std::size_t>(points));
  const double span = hi - lo;
  for (int i = 0; i < points; ++i) {
    t[static_cast<std::size_t>(i)] = lo + span * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  t.back() = hi;
  return t;
}

TimeSeries gen_1d(const TaskSpec& spec, std::mt19937_64& rng) {
  if (spec.task == Task::LotkaVolterra) throw std::invalid_argument("gen_1d: not a 1-D task");
  std::uniform_real_distribution<double> ua(spec.a_range.first, spec.a_range.second);
  std::uniform_real_distribution<double> ub(spec.b_range.first, spec.b_range.second);
  const double a = ua(rng);
  const double b = ub(rng);
  TimeSeries s;
  s.times = linspace(spec.t_range.first, spec.t_range.second, spec.points);
  s.values.resize(spec.points, 1);
  for (int i = 0; i < spec.points; ++i) {
    s.values(i, 0) = eval_1d(spec.task, a, b, s.times[static_cast<std::size_t>(i)]);
  }
  s.meta = {{"task", to_string(spec.task)}, {"a", a}, {"b", b}};
  return s;
}

std::array<double, 2> lotka_volterra_rhs(double u, double v, const LotkaVolterraParams& p) {
  return {p.alpha * u - p.beta * u * v, p.delta * u * v - p.gamma * v};
}

TimeSeries gen_lotka_volterra(const TaskSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ue(spec.e_range.first, spec.e_range.second);
  const double e = ue(rng);
  const LotkaVolterraParams& p = spec.lv;

  const std::vector<double> raw = linspace(0.0, spec.lv_t_end, spec.points);
  TimeSeries s;
  s.values.resize(spec.points, 2);
  s.times.reserve(raw.size());
  double u = 2.0 * e;
  double v = e;
  s.values(0, 0) = u;
  s.values(0, 1) = v;
  auto rhs = [&p](const std::array<double, 2>& x) { return lotka_volterra_rhs(x[0], x[1], p); };
  for (int i = 1; i < spec.points; ++i) {
    const double interval = raw[static_cast<std::size_t>(i)] - raw[static_cast<std::size_t>(i - 1)];
    // Substeps no longer than lv_max_step, landing exactly on the sample time.
    const int substeps = static_cast<int>(std::ceil(interval / spec.lv_max_step));
    const double h = interval / substeps;
    for (int k = 0; k < substeps; ++k) {
      const std::array<double, 2> x{u, v};
      const auto k1 = rhs(x);
      const auto k2 = rhs({x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]});
      const auto k3 = rhs({x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]});
      const auto k4 = rhs({x[0] + h * k3[0], x[1] + h * k3[1]});
      u += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
      v += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
      if (!(u > 0.0) || !(v > 0.0)) {
        throw DivergenceError("Lotka-Volterra populations left the positive quadrant; step too coarse");
      }
    }
    s.values(i, 0) = u;
    s.values(i, 1) = v;
  }
  for (double t : raw) s.times.push_back(t / spec.lv_time_scale);
  s.meta = {{"task", to_string(Task::LotkaVolterra)}, {"E", e}, {"u0", 2.0 * e}, {"v0", e}};
  return s;
}

TimeSeries generate_series(const TaskSpec& spec, std::mt19937_64& rng) {
  return spec.task == Task::LotkaVolterra ? gen_lotka_volterra(spec, rng) : gen_1d(spec, rng);
}

double conserved_quantity(double u, double v, const LotkaVolterraParams& p) {
  if (!(u > 0.0) || !(v > 0.0)) throw DomainError("conserved_quantity: populations must be positive");
  return p.delta * u - p.gamma * std::log(u) + p.beta * v - p.alpha * std::log(v);
}

double conservation_drift(const TimeSeries& series, const LotkaVolterraParams& p) {
  if (series.dim() != 2 || series.size() == 0) throw ShapeError("conservation_drift: expects a 2-D series");
  const double v0 = conserved_quantity(series.values(0, 0), series.values(0, 1), p);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < series.values.rows(); ++i) {
    const double vi = conserved_quantity(series.values(i, 0), series.values(i, 1), p);
    worst = std::max(worst, std::abs(vi - v0) / std::abs(v0));
  }
  return worst;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

Dataset make_dataset(const TaskSpec& spec) {
  if (spec.train_count < 1 || spec.test_count < 1) throw DomainError("dataset counts must be >= 1");
  if (spec.points < 2) throw DomainError("series need at least two points");
  Dataset d;
  auto train_rng = stream_rng(spec.seed, 0);
  auto test_rng = stream_rng(spec.seed, 1);
  d.train.reserve(static_cast<std::size_t>(spec.train_count));
  d.test.reserve(static_cast<std::size_t>(spec.test_count));
  for (int i = 0; i < spec.train_count; ++i) d.train.push_back(generate_series(spec, train_rng));
  for (int i = 0; i < spec.test_count; ++i) d.test.push_back(generate_series(spec, test_rng));
  return d;
}

void write_series_jsonl(const std::filesystem::path& path, std::span<const TimeSeries> series) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const TimeSeries& s : series) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
      std::vector<double> row(s.values.row(i).data(), s.values.row(i).data() + s.values.cols());
      rows.push_back(std::move(row));
    }
    const nlohmann::json line = {{"t", s.times}, {"y", std::move(rows)}, {"meta", s.meta}};
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TimeSeries> read_series_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TimeSeries> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      TimeSeries s;
      s.times = doc.at("t").get<std::vector<double>>();
      const auto rows = doc.at("y").get<std::vector<std::vector<double>>>();
      if (rows.size() != s.times.size() || rows.empty()) {
        throw ShapeError("value rows do not match the number of times");
      }
      s.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw ShapeError("ragged value rows");
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
          s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
      }
      s.meta = doc.value("meta", nlohmann::json::object());
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::filesystem::path split_path(const std::filesystem::path& dir, Task task, std::string_view split) {
  return dir / (to_string(task) + "-" + std::string(split) + ".jsonl");
}

void write_dataset(const std::filesystem::path& dir, const TaskSpec& spec, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_series_jsonl(split_path(dir, spec.task, "train"), data.train);
  write_series_jsonl(split_path(dir, spec.task, "test"), data.test);
  const auto spec_path = dir / (to_string(spec.task) + ".spec.json");
  std::ofstream out(spec_path);
  if (!out) throw IoError("cannot write " + spec_path.string());
  out << to_json(spec).dump(2) << '\n';
}

std::vector<Eigen::Index> choose_indices(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng) {
  if (k < 0 || k > n) throw DomainError("choose_indices: need 0 <= k <= n");
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  for (Eigen::Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

TimeSeries irregular_subsample(const TimeSeries& series, int k, std::mt19937_64& rng, bool keep_t0) {
  const int n = static_cast<int>(series.size());
  if (k < 0 || k >= n) throw DomainError("irregular_subsample: need 0 <= k < length");
  std::vector<int> candidates(static_cast<std::size_t>(keep_t0 ? n - 1 : n));
  std::iota(candidates.begin(), candidates.end(), keep_t0 ? 1 : 0);
  // Partial Fisher-Yates: the first k entries form the removal set.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(candidates.size()) - 1);
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<bool> removed(static_cast<std::size_t>(n), false);
  for (int i = 0; i < k; ++i) removed[static_cast<std::size_t>(candidates[static_cast<std::size_t>(i)])] = true;

  TimeSeries out;
  out.meta = series.meta;
  out.values.resize(n - k, series.dim());
  Eigen::Index r = 0;
  for (int i = 0; i < n; ++i) {
    if (removed[static_cast<std::size_t>(i)]) continue;
    out.times.push_back(series.times[static_cast<std::size_t>(i)]);
    out.values.row(r++) = series.values.row(i);
  }
  return out;
}

}  // namespace ndp
