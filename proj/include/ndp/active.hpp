#pragma once

#include "ndp/data.hpp"
#include "ndp/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ndp {

enum class QueryStrategy { MaxUncertainty, Random };

std::string to_string(QueryStrategy s);
/// "max-uncertainty" or "random".
QueryStrategy parse_query_strategy(std::string_view name);

struct QueryPolicy {
  QueryStrategy strategy = QueryStrategy::MaxUncertainty;
  /// Latent draws used to estimate the predictive variance.
  int samples = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-time population variance (divide by S) of S decoded means, summed
/// over output dimensions. means[k] is times x obs_dim.
std::vector<double> sample_variance(std::span<const Mat> means);

/// Variance of S sampled predictive means at each candidate time. All draws
/// share one batched integration. Throws DomainError for S < 2.
std::vector<double> predictive_uncertainty(const Model& model, const ContextSet& ctx,
                                           std::span<const double> candidate_times, int samples,
                                           std::uint64_t seed);

struct AlStep {
  int step = 0;
  /// Index into the series of the point added at this step (-1 at step 0).
  long queried_index = -1;
  double queried_t = 0.0;
  /// Mean-mode MSE over the whole series with the context after this step.
  double mse = 0.0;
};

struct AlRun {
  std::vector<long> initial_context;
  std::vector<AlStep> steps;

  /// Columns step, queried_t, mse; queried_t is empty at step 0.
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Greedy acquisition on one series without retraining. The initial context
/// is drawn with the policy seed, so both strategies start from the same
/// points. Throws DomainError when steps exceed the unqueried points.
AlRun active_learning_run(const Model& model, const TimeSeries& series, int init_context_size,
                          int steps, const QueryPolicy& policy);

}  // namespace ndp
