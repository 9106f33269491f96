#pragma once

#include <fstream>
#include <sstream>

#include "mtfatt/model.hpp"

// Run configuration: "section.key = value" text files, strict about
// unknown keys, with canonical serialization for echoing the effective
// configuration.
namespace mtfatt {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model = ModelConfig::desk_scale();
  // paths
  std::string dataset_root;
  std::string manifest;
  std::string checkpoint_dir = "checkpoints";
  std::string out_dir = "out";
  // training
  std::string stem = "synthetic-vocals";
  int epochs = 30;
  int batch = 4;
  uint64_t seed = 1234;
  int shift_frames = 0;
  double lr0 = 1e-3;
  double alpha = 0.1;
  int threads = 0;  // 0: leave the OpenMP default alone
  // synthetic dataset
  int synth_train = 8;
  int synth_val = 2;
  int synth_test = 2;
  double synth_duration = 20.0;
  uint64_t synth_seed = 77;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline int to_int(const std::string& key, const std::string& v) {
  try {
    size_t used;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
}

inline uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t used;
    auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an unsigned integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs a number, got '" + v + "'");
  }
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, trim(item)));
  if (out.empty()) throw ConfigError("config: key '" + key + "' needs a comma-separated list");
  return out;
}

}  // namespace detail

// Applies one key. Returns normally or throws ConfigError on unknown keys
// and malformed values.
inline void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::to_double;
  using detail::to_int;
  using detail::to_int_list;
  using detail::to_u64;
  if (key == "model.preset") {
    if (value == "full") cfg.model = ModelConfig::full_scale();
    else if (value == "desk") cfg.model = ModelConfig::desk_scale();
    else if (value == "micro") cfg.model = ModelConfig::micro();
    else throw ConfigError("config: unknown preset '" + value + "'");
  } else if (key == "model.sample_rate") cfg.model.sample_rate = to_int(key, value);
  else if (key == "model.n_fft") cfg.model.n_fft = to_int(key, value);
  else if (key == "model.hop") cfg.model.hop = to_int(key, value);
  else if (key == "model.k_bands") cfg.model.k_bands = to_int(key, value);
  else if (key == "model.segment_frames") cfg.model.segment_frames = to_int(key, value);
  else if (key == "model.channels") {
    auto c = to_int_list(key, value);
    if (c.size() != 3) throw ConfigError("config: model.channels needs three values");
    cfg.model.ch = {c[0], c[1], c[2]};
  } else if (key == "model.variant") cfg.model.variant = parse_variant(value);
  else if (key == "model.p_schedule") cfg.model.p_schedule = to_int_list(key, value);
  else if (key == "model.expansion") cfg.model.expansion = to_double(key, value);
  else if (key == "model.bn_eps") cfg.model.norm.eps = to_double(key, value);
  else if (key == "model.bn_momentum") cfg.model.norm.momentum = to_double(key, value);
  else if (key == "model.seed") cfg.model.seed = to_u64(key, value);
  else if (key == "paths.dataset_root") cfg.dataset_root = value;
  else if (key == "paths.manifest") cfg.manifest = value;
  else if (key == "paths.checkpoint_dir") cfg.checkpoint_dir = value;
  else if (key == "paths.out_dir") cfg.out_dir = value;
  else if (key == "train.stem") cfg.stem = value;
  else if (key == "train.epochs") cfg.epochs = to_int(key, value);
  else if (key == "train.batch") cfg.batch = to_int(key, value);
  else if (key == "train.seed") cfg.seed = to_u64(key, value);
  else if (key == "train.shift_frames") cfg.shift_frames = to_int(key, value);
  else if (key == "train.lr") cfg.lr0 = to_double(key, value);
  else if (key == "train.alpha") cfg.alpha = to_double(key, value);
  else if (key == "train.threads") cfg.threads = to_int(key, value);
  else if (key == "synth.songs_train") cfg.synth_train = to_int(key, value);
  else if (key == "synth.songs_val") cfg.synth_val = to_int(key, value);
  else if (key == "synth.songs_test") cfg.synth_test = to_int(key, value);
  else if (key == "synth.duration") cfg.synth_duration = to_double(key, value);
  else if (key == "synth.seed") cfg.synth_seed = to_u64(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "<text>") {
  // model.preset applies first regardless of position, then the rest in
  // file order, so explicit keys always override the preset.
  std::vector<std::pair<std::string, std::string>> kvs;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                        ": expected 'section.key = value'");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                        ": key '" + key + "' has no section");
    kvs.emplace_back(key, value);
  }
  RunConfig cfg;
  for (const auto& [k, v] : kvs)
    if (k == "model.preset") apply_config_kv(cfg, k, v);
  for (const auto& [k, v] : kvs)
    if (k != "model.preset") apply_config_kv(cfg, k, v);
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  char num[64];
  auto put_d = [&](const char* key, double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    os << key << " = " << num << "\n";
  };
  os << "model.sample_rate = " << cfg.model.sample_rate << "\n"
     << "model.n_fft = " << cfg.model.n_fft << "\n"
     << "model.hop = " << cfg.model.hop << "\n"
     << "model.k_bands = " << cfg.model.k_bands << "\n"
     << "model.segment_frames = " << cfg.model.segment_frames << "\n"
     << "model.channels = " << cfg.model.ch.c1 << "," << cfg.model.ch.c2 << "," << cfg.model.ch.c3
     << "\n"
     << "model.variant = " << variant_name(cfg.model.variant) << "\n";
  os << "model.p_schedule = ";
  for (size_t i = 0; i < cfg.model.p_schedule.size(); ++i)
    os << (i ? "," : "") << cfg.model.p_schedule[i];
  os << "\n";
  put_d("model.expansion", cfg.model.expansion);
  put_d("model.bn_eps", cfg.model.norm.eps);
  put_d("model.bn_momentum", cfg.model.norm.momentum);
  os << "model.seed = " << cfg.model.seed << "\n"
     << "paths.dataset_root = " << cfg.dataset_root << "\n"
     << "paths.manifest = " << cfg.manifest << "\n"
     << "paths.checkpoint_dir = " << cfg.checkpoint_dir << "\n"
     << "paths.out_dir = " << cfg.out_dir << "\n"
     << "train.stem = " << cfg.stem << "\n"
     << "train.epochs = " << cfg.epochs << "\n"
     << "train.batch = " << cfg.batch << "\n"
     << "train.seed = " << cfg.seed << "\n"
     << "train.shift_frames = " << cfg.shift_frames << "\n";
  put_d("train.lr", cfg.lr0);
  put_d("train.alpha", cfg.alpha);
  os << "train.threads = " << cfg.threads << "\n"
     << "synth.songs_train = " << cfg.synth_train << "\n"
     << "synth.songs_val = " << cfg.synth_val << "\n"
     << "synth.songs_test = " << cfg.synth_test << "\n";
  put_d("synth.duration", cfg.synth_duration);
  os << "synth.seed = " << cfg.synth_seed << "\n";
  return os.str();
}

}  // namespace mtfatt
