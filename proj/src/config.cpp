#include "smrnet/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "smrnet/common.hpp"

namespace smrnet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  char buf[32];
  for (size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", v[i]);
    if (i) out += ",";
    out += buf;
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for '" + key + "': " + v);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': " + v);
  }
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& piece : split(v, ','))
    if (!piece.empty()) out.push_back(parse_double(key, piece));
  if (out.empty()) throw ConfigError("config: empty list for '" + key + "'");
  return out;
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# smrnet run configuration\n";
  os << "preset = " << model.preset << "\n";
  os << "attention = " << (model.attention_enabled ? "true" : "false") << "\n";
  os << "attention_per_block = " << (model.attention_per_block ? "true" : "false")
     << "\n";
  os << "msff = " << (model.msff_enabled ? "true" : "false") << "\n";
  os << "rw = " << (model.rw_enabled ? "true" : "false") << "\n";
  os << "d2 = " << model.d2 << "\n";
  os << "d3 = " << model.d3 << "\n";
  os << "fused_channels = " << model.fused_channels << "\n";
  os << "head_hidden = " << model.head_hidden << "\n";
  os << "in_channels = " << model.in_channels << "\n";
  os << "rpn_concat_combine = " << (model.rpn_concat_combine ? "true" : "false") << "\n";
  os << "anchor_scales = " << join_doubles(model.anchors.scales) << "\n";
  os << "anchor_ratios = " << join_doubles(model.anchors.ratios) << "\n";
  os << "lr = " << fmt(train.lr) << "\n";
  os << "momentum = " << fmt(train.momentum) << "\n";
  os << "clip_norm = " << fmt(train.clip_norm) << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "rpn_batch = " << train.rpn_batch << "\n";
  os << "roi_batch = " << train.roi_batch << "\n";
  os << "seed = " << seed << "\n";
  if (!data_dirs.empty()) {
    os << "data = ";
    for (size_t i = 0; i < data_dirs.size(); ++i) {
      if (i) os << ",";
      os << data_dirs[i];
    }
    os << "\n";
  }
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(lineno));
    kv[key] = value;
  }

  RunConfig cfg;
  // Preset first: it sets width defaults the other keys may override.
  if (auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "tiny")
      cfg.model = ModelConfig::tiny();
    else if (it->second == "full")
      cfg.model = ModelConfig::full();
    else
      throw ConfigError("config: unknown preset '" + it->second + "'");
    kv.erase(it);
  }
  for (const auto& [key, value] : kv) {
    if (key == "attention") cfg.model.attention_enabled = parse_bool(key, value);
    else if (key == "attention_per_block") cfg.model.attention_per_block = parse_bool(key, value);
    else if (key == "msff") cfg.model.msff_enabled = parse_bool(key, value);
    else if (key == "rw") cfg.model.rw_enabled = parse_bool(key, value);
    else if (key == "d2") cfg.model.d2 = parse_int(key, value);
    else if (key == "d3") cfg.model.d3 = parse_int(key, value);
    else if (key == "fused_channels") cfg.model.fused_channels = parse_int(key, value);
    else if (key == "head_hidden") cfg.model.head_hidden = parse_int(key, value);
    else if (key == "in_channels") cfg.model.in_channels = parse_int(key, value);
    else if (key == "rpn_concat_combine") cfg.model.rpn_concat_combine = parse_bool(key, value);
    else if (key == "anchor_scales") cfg.model.anchors.scales = parse_doubles(key, value);
    else if (key == "anchor_ratios") cfg.model.anchors.ratios = parse_doubles(key, value);
    else if (key == "lr") cfg.train.lr = parse_double(key, value);
    else if (key == "momentum") cfg.train.momentum = parse_double(key, value);
    else if (key == "clip_norm") cfg.train.clip_norm = parse_double(key, value);
    else if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "rpn_batch") cfg.train.rpn_batch = static_cast<int>(parse_int(key, value));
    else if (key == "roi_batch") cfg.train.roi_batch = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "data") cfg.data_dirs = split(value, ',');
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  if (cfg.train.epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (cfg.train.batch_size < 2)
    throw ConfigError("config: batch_size must be >= 2 (batchnorm train mode)");
  if (cfg.train.lr <= 0) throw ConfigError("config: lr must be positive");
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

}  // namespace smrnet
