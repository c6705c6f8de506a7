#include "ndp/active.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>

namespace ndp {

std::string to_string(QueryStrategy s) {
  return s == QueryStrategy::Random ? "random" : "max-uncertainty";
}

QueryStrategy parse_query_strategy(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "max-uncertainty" || s == "uncertainty" || s == "active") return QueryStrategy::MaxUncertainty;
  if (s == "random") return QueryStrategy::Random;
  throw std::invalid_argument("unknown query policy '" + std::string(name) + "'");
}

void QueryPolicy::validate() const {
  if (strategy == QueryStrategy::MaxUncertainty && samples < 2) {
    throw DomainError("max-uncertainty needs at least two samples");
  }
}

std::vector<double> sample_variance(std::span<const Mat> means) {
  if (means.empty()) throw DomainError("sample_variance: no samples");
  const Mat& first = means.front();
  for (const Mat& m : means) {
    if (m.rows() != first.rows() || m.cols() != first.cols()) throw ShapeError("sample_variance: ragged samples");
  }
  const double count = static_cast<double>(means.size());
  std::vector<double> out(static_cast<std::size_t>(first.rows()), 0.0);
  for (Eigen::Index i = 0; i < first.rows(); ++i) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < first.cols(); ++j) {
      double mean = 0.0;
      for (const Mat& m : means) mean += m(i, j);
      mean /= count;
      double var = 0.0;
      for (const Mat& m : means) var += (m(i, j) - mean) * (m(i, j) - mean);
      total += var / count;
    }
    out[static_cast<std::size_t>(i)] = total;
  }
  return out;
}

std::vector<double> predictive_uncertainty(const Model& model, const ContextSet& ctx,
                                           std::span<const double> candidate_times, int samples,
                                           std::uint64_t seed) {
  if (samples < 2) throw DomainError("predictive_uncertainty: need at least two samples");
  if (candidate_times.empty()) return {};
  const Posterior post = infer_posterior(model, ctx);
  std::mt19937_64 rng(seed);
  const auto latents = sample_latents(post, samples, rng);
  const auto means = decode_latents(model, latents, candidate_times);
  return sample_variance(means);
}

namespace {

ContextSet gather_context(const TimeSeries& series, const std::vector<long>& context) {
  ContextSet ctx;
  ctx.y.resize(static_cast<Eigen::Index>(context.size()), series.dim());
  for (std::size_t i = 0; i < context.size(); ++i) {
    ctx.t.push_back(series.times[static_cast<std::size_t>(context[i])]);
    ctx.y.row(static_cast<Eigen::Index>(i)) = series.values.row(context[i]);
  }
  return ctx;
}

double series_mse(const Model& model, const TimeSeries& series, const std::vector<long>& context) {
  const Prediction pred = predict(model, gather_context(series, context), series.times);
  return (pred.mean - series.values).squaredNorm() / static_cast<double>(series.values.size());
}

}  // namespace

AlRun active_learning_run(const Model& model, const TimeSeries& series, int init_context_size,
                          int steps, const QueryPolicy& policy) {
  policy.validate();
  const auto length = static_cast<long>(series.size());
  if (init_context_size < 1 || init_context_size > length) {
    throw DomainError("active_learning_run: initial context size must lie in [1, length]");
  }
  if (steps < 0 || steps > length - init_context_size) {
    throw DomainError("active_learning_run: more steps than unqueried points");
  }
  std::mt19937_64 rng(policy.seed);
  AlRun run;
  for (Eigen::Index i : choose_indices(length, init_context_size, rng)) run.initial_context.push_back(i);

  std::vector<long> context = run.initial_context;
  std::vector<bool> used(static_cast<std::size_t>(length), false);
  for (long i : context) used[static_cast<std::size_t>(i)] = true;
  run.steps.push_back({0, -1, 0.0, series_mse(model, series, context)});

  for (int k = 1; k <= steps; ++k) {
    std::vector<long> candidates;
    for (long i = 0; i < length; ++i) {
      if (!used[static_cast<std::size_t>(i)]) candidates.push_back(i);
    }
    long chosen = -1;
    if (policy.strategy == QueryStrategy::Random) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      chosen = candidates[pick(rng)];
    } else {
      std::vector<double> times;
      times.reserve(candidates.size());
      for (long i : candidates) times.push_back(series.times[static_cast<std::size_t>(i)]);
      const auto scores =
          predictive_uncertainty(model, gather_context(series, context), times, policy.samples, rng());
      // Candidates are in increasing time, so the first maximum is the earliest.
      std::size_t best = 0;
      for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
      }
      chosen = candidates[best];
    }
    used[static_cast<std::size_t>(chosen)] = true;
    context.push_back(chosen);
    run.steps.push_back({k, chosen, series.times[static_cast<std::size_t>(chosen)],
                         series_mse(model, series, context)});
  }
  return run;
}

void AlRun::write_csv(std::ostream& out) const {
  out << "step,queried_t,mse\n" << std::setprecision(17);
  for (const AlStep& s : steps) {
    out << s.step << ',';
    if (s.queried_index >= 0) out << s.queried_t;
    out << ',' << s.mse << '\n';
  }
}

void AlRun::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_csv(out);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ndp
