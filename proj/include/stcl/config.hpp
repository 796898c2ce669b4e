#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stcl/dataflow.hpp"
#include "stcl/model.hpp"
#include "stcl/synthgen.hpp"
#include "stcl/trainer.hpp"

namespace stcl {

// Resolved run configuration. Persisted as a key=value text file (one pair
// per line, '#' comments); unknown keys are rejected, missing keys take the
// defaults below.
struct RunConfig {
  GridSpec grid;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  double split_fraction = 0.75;
  size_t m_span = 4;  // transition span-discard threshold, in intervals
};

namespace detail {

inline std::string join_list(const std::vector<size_t>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <size_t N>
inline std::string join_list(const std::array<double, N>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<size_t> parse_size_list(const std::string& s, const std::string& key) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    try {
      out.push_back(std::stoul(item));
    } catch (...) {
      throw ConfigError("config key " + key + ": bad list element '" + item + "'");
    }
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

template <typename T>
inline T parse_num(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    if constexpr (std::is_floating_point_v<T>) {
      double v = std::stod(s, &pos);
      if (pos == s.size()) return static_cast<T>(v);
    } else {
      long long v = std::stoll(s, &pos);
      if (pos == s.size()) return static_cast<T>(v);
    }
  } catch (...) {
  }
  throw ConfigError("config key " + key + ": cannot parse value '" + s + "'");
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + s + "'");
}

}  // namespace detail

inline void config_set(RunConfig& c, const std::string& key, const std::string& val) {
  using detail::parse_bool;
  using detail::parse_num;
  auto& g = c.grid;
  auto& m = c.model;
  auto& t = c.train;
  auto& s = c.synth;
  if (key == "grid.lon_min") g.lon_min = parse_num<double>(val, key);
  else if (key == "grid.lon_max") g.lon_max = parse_num<double>(val, key);
  else if (key == "grid.lat_min") g.lat_min = parse_num<double>(val, key);
  else if (key == "grid.lat_max") g.lat_max = parse_num<double>(val, key);
  else if (key == "grid.x_cells") g.x_cells = parse_num<size_t>(val, key);
  else if (key == "grid.y_cells") g.y_cells = parse_num<size_t>(val, key);
  else if (key == "grid.interval_minutes") g.interval_minutes = parse_num<int>(val, key);
  else if (key == "grid.t0") g.t0 = parse_num<int64_t>(val, key);
  else if (key == "grid.num_intervals") g.num_intervals = parse_num<size_t>(val, key);
  else if (key == "model.d_model") m.d_model = parse_num<size_t>(val, key);
  else if (key == "model.d_f") m.d_f = parse_num<size_t>(val, key);
  else if (key == "model.num_layers") m.num_layers = parse_num<size_t>(val, key);
  else if (key == "model.num_heads") m.num_heads = parse_num<size_t>(val, key);
  else if (key == "model.dropout") m.dropout_rate = parse_num<double>(val, key);
  else if (key == "model.m_pool") m.m_pool = parse_num<size_t>(val, key);
  else if (key == "model.stfm_channels") m.stfm_channels = parse_num<size_t>(val, key);
  else if (key == "model.stfm_kernel") m.stfm_kernel = parse_num<size_t>(val, key);
  else if (key == "model.ft_kernel_sizes") m.ft_kernel_sizes = detail::parse_size_list(val, key);
  else if (key == "model.attention_window") m.attention_window = parse_num<size_t>(val, key);
  else if (key == "model.t_hist") m.T_hist = parse_num<size_t>(val, key);
  else if (key == "model.z") m.z = parse_num<int>(val, key);
  else if (key == "model.use_stfm") m.use_stfm = parse_bool(val, key);
  else if (key == "model.use_accident_encoding") m.use_accident_encoding = parse_bool(val, key);
  else if (key == "model.use_ft_block") m.use_ft_block = parse_bool(val, key);
  else if (key == "model.ft_causal_in_decoder") m.ft_causal_in_decoder = parse_bool(val, key);
  else if (key == "model.local_attention") m.local_attention = parse_bool(val, key);
  else if (key == "train.batch_size") t.batch_size = parse_num<size_t>(val, key);
  else if (key == "train.warmup") t.warmup = parse_num<long>(val, key);
  else if (key == "train.max_epochs") t.max_epochs = parse_num<size_t>(val, key);
  else if (key == "train.seed") t.seed = parse_num<uint64_t>(val, key);
  else if (key == "train.eval_region_threshold") t.eval_region_threshold = parse_num<double>(val, key);
  else if (key == "train.steps_per_epoch") t.steps_per_epoch = parse_num<size_t>(val, key);
  else if (key == "train.validation_fraction") t.validation_fraction = parse_num<double>(val, key);
  else if (key == "synth.x_cells") s.x_cells = parse_num<size_t>(val, key);
  else if (key == "synth.y_cells") s.y_cells = parse_num<size_t>(val, key);
  else if (key == "synth.days") s.days = parse_num<int>(val, key);
  else if (key == "synth.interval_minutes") s.interval_minutes = parse_num<int>(val, key);
  else if (key == "synth.base_rate") s.base_rate = parse_num<double>(val, key);
  else if (key == "synth.daily_amplitude") s.daily_amplitude = parse_num<double>(val, key);
  else if (key == "synth.weekday_factor") {
    std::stringstream ss(val);
    std::string item;
    size_t i = 0;
    while (std::getline(ss, item, ',') && i < 7)
      s.weekday_factor[i++] = detail::parse_num<double>(item, key);
    if (i != 7) throw ConfigError("config key " + key + ": expected 7 values");
  } else if (key == "synth.accident_rate") s.accident_rate = parse_num<double>(val, key);
  else if (key == "synth.accident_duration") s.accident_duration = parse_num<int>(val, key);
  else if (key == "synth.suppression") s.suppression = parse_num<double>(val, key);
  else if (key == "synth.boost") s.boost = parse_num<double>(val, key);
  else if (key == "synth.seed") s.seed = parse_num<uint64_t>(val, key);
  else if (key == "synth.t0") s.t0 = parse_num<int64_t>(val, key);
  else if (key == "data.split_fraction") c.split_fraction = parse_num<double>(val, key);
  else if (key == "data.m_span") c.m_span = parse_num<size_t>(val, key);
  else throw ConfigError("unknown config key: " + key);
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string& s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    };
    strip(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    strip(key);
    strip(val);
    config_set(c, key, val);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical echo of the fully resolved configuration.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "grid.lon_min=" << c.grid.lon_min << "\n";
  os << "grid.lon_max=" << c.grid.lon_max << "\n";
  os << "grid.lat_min=" << c.grid.lat_min << "\n";
  os << "grid.lat_max=" << c.grid.lat_max << "\n";
  os << "grid.x_cells=" << c.grid.x_cells << "\n";
  os << "grid.y_cells=" << c.grid.y_cells << "\n";
  os << "grid.interval_minutes=" << c.grid.interval_minutes << "\n";
  os << "grid.t0=" << c.grid.t0 << "\n";
  os << "grid.num_intervals=" << c.grid.num_intervals << "\n";
  os << "model.d_model=" << c.model.d_model << "\n";
  os << "model.d_f=" << c.model.d_f << "\n";
  os << "model.num_layers=" << c.model.num_layers << "\n";
  os << "model.num_heads=" << c.model.num_heads << "\n";
  os << "model.dropout=" << c.model.dropout_rate << "\n";
  os << "model.m_pool=" << c.model.m_pool << "\n";
  os << "model.stfm_channels=" << c.model.stfm_channels << "\n";
  os << "model.stfm_kernel=" << c.model.stfm_kernel << "\n";
  os << "model.ft_kernel_sizes=" << detail::join_list(c.model.ft_kernel_sizes) << "\n";
  os << "model.attention_window=" << c.model.attention_window << "\n";
  os << "model.t_hist=" << c.model.T_hist << "\n";
  os << "model.z=" << c.model.z << "\n";
  os << "model.use_stfm=" << (c.model.use_stfm ? "true" : "false") << "\n";
  os << "model.use_accident_encoding=" << (c.model.use_accident_encoding ? "true" : "false") << "\n";
  os << "model.use_ft_block=" << (c.model.use_ft_block ? "true" : "false") << "\n";
  os << "model.ft_causal_in_decoder=" << (c.model.ft_causal_in_decoder ? "true" : "false") << "\n";
  os << "model.local_attention=" << (c.model.local_attention ? "true" : "false") << "\n";
  os << "train.batch_size=" << c.train.batch_size << "\n";
  os << "train.warmup=" << c.train.warmup << "\n";
  os << "train.max_epochs=" << c.train.max_epochs << "\n";
  os << "train.seed=" << c.train.seed << "\n";
  os << "train.eval_region_threshold=" << c.train.eval_region_threshold << "\n";
  os << "train.steps_per_epoch=" << c.train.steps_per_epoch << "\n";
  os << "train.validation_fraction=" << c.train.validation_fraction << "\n";
  os << "synth.x_cells=" << c.synth.x_cells << "\n";
  os << "synth.y_cells=" << c.synth.y_cells << "\n";
  os << "synth.days=" << c.synth.days << "\n";
  os << "synth.interval_minutes=" << c.synth.interval_minutes << "\n";
  os << "synth.base_rate=" << c.synth.base_rate << "\n";
  os << "synth.daily_amplitude=" << c.synth.daily_amplitude << "\n";
  os << "synth.weekday_factor=" << detail::join_list(c.synth.weekday_factor) << "\n";
  os << "synth.accident_rate=" << c.synth.accident_rate << "\n";
  os << "synth.accident_duration=" << c.synth.accident_duration << "\n";
  os << "synth.suppression=" << c.synth.suppression << "\n";
  os << "synth.boost=" << c.synth.boost << "\n";
  os << "synth.seed=" << c.synth.seed << "\n";
  os << "synth.t0=" << c.synth.t0 << "\n";
  os << "data.split_fraction=" << c.split_fraction << "\n";
  os << "data.m_span=" << c.m_span << "\n";
  return os.str();
}

inline std::map<std::string, std::string> config_key_map(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

// First model.* or grid.* key that differs between two resolved config texts,
// or empty if compatible. Used for checkpoint/config compatibility checks.
inline std::string first_incompatible_key(const std::string& a, const std::string& b) {
  auto ma = config_key_map(a);
  auto mb = config_key_map(b);
  for (const auto& [k, v] : ma) {
    if (k.rfind("model.", 0) != 0 && k.rfind("grid.", 0) != 0) continue;
    auto it = mb.find(k);
    if (it == mb.end() || it->second != v) return k;
  }
  return "";
}

}  // namespace stcl
