#pragma once

#include "ndp/tape.hpp"

#include "json.hpp"

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ndp {

/// Named parameter tensors with a gradient buffer each, keyed by layer path
/// ("encoder.0.weight", ...). Insertion order is preserved and defines ids.
class ParamStore {
 public:
  std::size_t add(std::string name, Mat value);

  std::size_t size() const { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t scalar_count() const;

  const std::string& name(std::size_t id) const { return entries_.at(id).name; }
  const Mat& value(std::size_t id) const { return entries_.at(id).value; }
  Mat& value(std::size_t id) { return entries_.at(id).value; }
  const Mat& grad(std::size_t id) const { return entries_.at(id).grad; }
  Mat& grad(std::size_t id) { return entries_.at(id).grad; }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Like find() but throws std::out_of_range for unknown names.
  std::size_t id(std::string_view name) const;

  void zero_grad();
  bool all_finite() const;
  bool grads_finite() const;
  bool same_shapes(const ParamStore& other) const;

  /// Copies values (not gradients) from a store with identical layout.
  void assign_values(const ParamStore& other);

 private:
  struct Entry {
    std::string name;
    Mat value;
    Mat grad;
  };
  std::vector<Entry> entries_;
};

/// Weights uniform in +-1/sqrt(fan_in).
Mat fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                   std::mt19937_64& rng);

/// {"name": {"shape": [r, c], "data": [row-major values]}, ...}
nlohmann::json params_to_json(const ParamStore& store);
/// Loads values into `store`; names and shapes must match its layout.
void params_from_json(const nlohmann::json& doc, ParamStore& store);

}  // namespace ndp
