#include "ndp/config.hpp"

#include "ndp/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace ndp {

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{
      "task",          "seed",          "data_seed",     "out_dir",       "data_dir",
      "points",        "train_count",   "test_count",    "model",         "latent_dim",
      "control_dim",   "r_dim",         "hidden_dim",    "z_dim",         "encoder_hidden",
      "ode_hidden",    "decoder_hidden", "decoder_features", "obs_sigma", "solver_step",
      "y0_in_context", "epochs",        "batch_size",    "context_min",   "context_max",
      "extra_min",     "extra_max",     "learning_rate", "eval_context",  "eval_seed"};
  return keys;
}

RunConfig resolve_run_config(const nlohmann::json& doc, std::uint64_t fallback_seed) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const auto& keys = run_config_keys();
  for (const auto& [key, value] : doc.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  try {
    RunConfig cfg;
    const Task task = parse_task(doc.value("task", std::string("sine")));
    cfg.seed = doc.contains("seed") ? doc.at("seed").get<std::uint64_t>() : fallback_seed;

    cfg.task = default_task_spec(task);
    cfg.task.seed = doc.contains("data_seed") ? doc.at("data_seed").get<std::uint64_t>() : cfg.seed;
    if (doc.contains("points")) cfg.task.points = doc.at("points").get<int>();
    if (doc.contains("train_count")) cfg.task.train_count = doc.at("train_count").get<int>();
    if (doc.contains("test_count")) cfg.task.test_count = doc.at("test_count").get<int>();

    const Variant variant = parse_variant(doc.value("model", std::string("ndp")));
    cfg.model = default_model_spec(cfg.task, variant);
    ModelSpec& m = cfg.model;
    if (doc.contains("latent_dim")) m.latent_dim = doc.at("latent_dim").get<Eigen::Index>();
    if (doc.contains("control_dim")) m.control_dim = doc.at("control_dim").get<Eigen::Index>();
    if (doc.contains("r_dim")) m.r_dim = doc.at("r_dim").get<Eigen::Index>();
    if (doc.contains("hidden_dim")) m.hidden_dim = doc.at("hidden_dim").get<Eigen::Index>();
    if (doc.contains("z_dim")) m.z_dim = doc.at("z_dim").get<Eigen::Index>();
    if (doc.contains("encoder_hidden")) m.encoder_hidden = doc.at("encoder_hidden").get<std::vector<Eigen::Index>>();
    if (doc.contains("ode_hidden")) m.ode_hidden = doc.at("ode_hidden").get<std::vector<Eigen::Index>>();
    if (doc.contains("decoder_hidden")) m.decoder_hidden = doc.at("decoder_hidden").get<std::vector<Eigen::Index>>();
    if (doc.contains("decoder_features")) m.decoder_features = doc.at("decoder_features").get<Eigen::Index>();
    if (doc.contains("obs_sigma")) m.obs_sigma = doc.at("obs_sigma").get<double>();
    if (doc.contains("solver_step")) m.step = doc.at("solver_step").get<double>();
    if (doc.contains("y0_in_context")) m.y0_always_in_context = doc.at("y0_in_context").get<bool>();
    m.validate();

    cfg.train = default_train_config(task);
    TrainConfig& t = cfg.train;
    t.seed = cfg.seed;
    if (doc.contains("epochs")) t.epochs = doc.at("epochs").get<int>();
    if (doc.contains("batch_size")) t.batch_size = doc.at("batch_size").get<int>();
    if (doc.contains("context_min")) t.context_min = doc.at("context_min").get<int>();
    if (doc.contains("context_max")) t.context_max = doc.at("context_max").get<int>();
    if (doc.contains("extra_min")) t.extra_min = doc.at("extra_min").get<int>();
    if (doc.contains("extra_max")) t.extra_max = doc.at("extra_max").get<int>();
    if (doc.contains("learning_rate")) t.learning_rate = doc.at("learning_rate").get<double>();
    if (doc.contains("eval_context")) t.eval_context = doc.at("eval_context").get<int>();
    if (doc.contains("eval_seed")) t.eval_seed = doc.at("eval_seed").get<std::uint64_t>();
    t.force_initial = m.y0_always_in_context;
    t.validate();

    if (doc.contains("out_dir")) cfg.out_dir = doc.at("out_dir").get<std::string>();
    if (doc.contains("data_dir")) cfg.data_dir = doc.at("data_dir").get<std::string>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

nlohmann::json to_json(const RunConfig& cfg) {
  const ModelSpec& m = cfg.model;
  const TrainConfig& t = cfg.train;
  return {{"task", to_string(cfg.task.task)},
          {"seed", cfg.seed},
          {"data_seed", cfg.task.seed},
          {"out_dir", cfg.out_dir.string()},
          {"data_dir", cfg.data_dir.string()},
          {"points", cfg.task.points},
          {"train_count", cfg.task.train_count},
          {"test_count", cfg.task.test_count},
          {"model", to_string(m.variant)},
          {"latent_dim", m.latent_dim},
          {"control_dim", m.control_dim},
          {"r_dim", m.r_dim},
          {"hidden_dim", m.hidden_dim},
          {"z_dim", m.z_dim},
          {"encoder_hidden", m.encoder_hidden},
          {"ode_hidden", m.ode_hidden},
          {"decoder_hidden", m.decoder_hidden},
          {"decoder_features", m.decoder_features},
          {"obs_sigma", m.obs_sigma},
          {"solver_step", m.step},
          {"y0_in_context", m.y0_always_in_context},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"context_min", t.context_min},
          {"context_max", t.context_max},
          {"extra_min", t.extra_min},
          {"extra_max", t.extra_max},
          {"learning_rate", t.learning_rate},
          {"eval_context", t.eval_context},
          {"eval_seed", t.eval_seed}};
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    nlohmann::json doc;
    in >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("NDP_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (*end != '\0' || raw[0] == '-') throw ConfigError(std::string("NDP_SEED is not an unsigned integer: ") + raw);
  return static_cast<std::uint64_t>(v);
}

}  // namespace ndp
