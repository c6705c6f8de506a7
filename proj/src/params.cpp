#include "ndp/params.hpp"

#include "ndp/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace ndp {

std::size_t ParamStore::add(std::string name, Mat value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Mat grad = Mat::Zero(value.rows(), value.cols());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return entries_.size() - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamStore::id(std::string_view name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *found;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

bool ParamStore::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.allFinite()) return false;
  }
  return true;
}

bool ParamStore::grads_finite() const {
  for (const auto& e : entries_) {
    if (!e.grad.allFinite()) return false;
  }
  return true;
}

bool ParamStore::same_shapes(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.rows() != other.entries_[i].value.rows() ||
        entries_[i].value.cols() != other.entries_[i].value.cols()) {
      return false;
    }
  }
  return true;
}

void ParamStore::assign_values(const ParamStore& other) {
  if (!same_shapes(other)) throw ShapeError("parameter layouts differ");
  for (std::size_t i = 0; i < size(); ++i) entries_[i].value = other.entries_[i].value;
}

Mat fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                   std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat w(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = dist(rng);
  }
  return w;
}

nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Mat& v = store.value(i);
    std::vector<double> data(v.data(), v.data() + v.size());
    doc[store.name(i)] = {{"shape", {v.rows(), v.cols()}}, {"data", std::move(data)}};
  }
  return doc;
}

void params_from_json(const nlohmann::json& doc, ParamStore& store) {
  if (!doc.is_object() || doc.size() != store.size()) {
    throw ShapeError("checkpoint parameter count does not match the model");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto it = doc.find(store.name(i));
    if (it == doc.end()) throw ShapeError("checkpoint lacks parameter " + store.name(i));
    const auto shape = it->at("shape").get<std::vector<Eigen::Index>>();
    const auto data = it->at("data").get<std::vector<double>>();
    Mat& v = store.value(i);
    if (shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols() ||
        static_cast<Eigen::Index>(data.size()) != v.size()) {
      throw ShapeError("shape mismatch for parameter " + store.name(i));
    }
    std::copy(data.begin(), data.end(), v.data());
  }
}

}  // namespace ndp
