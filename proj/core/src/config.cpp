#include "samdetr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace samdetr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string real_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(member) \
  Field { [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); }, \
          [](const RunConfig& c) { return std::to_string(c.member); } }
#define REAL_FIELD(member) \
  Field { [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_real(k, v); }, \
          [](const RunConfig& c) { return real_str(c.member); } }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"variant", {[](RunConfig& c, const std::string& k, const std::string& v) {
                     c.model.variant = wrap(k, [&] { return parse_variant(v); });
                   },
                   [](const RunConfig& c) { return std::string(to_string(c.model.variant)); }}},
      {"strategy", {[](RunConfig& c, const std::string& k, const std::string& v) {
                      c.model.aligner.strategy = wrap(k, [&] { return parse_strategy(v); });
                    },
                    [](const RunConfig& c) { return std::string(to_string(c.model.aligner.strategy)); }}},
      {"reweight", {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.aligner.reweight = to_bool(k, v); },
                    [](const RunConfig& c) { return std::string(c.model.aligner.reweight ? "true" : "false"); }}},
      {"search_range", {[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.model.aligner.search_range = wrap(k, [&] { return parse_search_range(v); });
                        },
                        [](const RunConfig& c) { return std::string(to_string(c.model.aligner.search_range)); }}},
      {"seed", {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
                [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"steps", SIZE_FIELD(steps)},
      {"lr", REAL_FIELD(lr)},
      {"backbone_lr_scale", REAL_FIELD(backbone_lr_scale)},
      {"weight_decay", REAL_FIELD(weight_decay)},
      {"grad_clip", REAL_FIELD(grad_clip)},
      {"decay_step", {[](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "auto") c.decay_step.reset();
                        else c.decay_step = to_size(k, v);
                      },
                      [](const RunConfig& c) { return c.decay_step ? std::to_string(*c.decay_step) : std::string("auto"); }}},
      {"batch_size", SIZE_FIELD(batch_size)},
      {"eval_interval", SIZE_FIELD(eval_interval)},
      {"train_scenes", SIZE_FIELD(train_scenes)},
      {"val_scenes", SIZE_FIELD(val_scenes)},
      {"out", {[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
               [](const RunConfig& c) { return c.out; }}},
      {"wall_clock", {[](RunConfig& c, const std::string& k, const std::string& v) { c.wall_clock = to_bool(k, v); },
                      [](const RunConfig& c) { return std::string(c.wall_clock ? "true" : "false"); }}},
      {"dim", SIZE_FIELD(model.dim)},
      {"heads", SIZE_FIELD(model.heads)},
      {"queries", SIZE_FIELD(model.queries)},
      {"encoder_layers", SIZE_FIELD(model.encoder_layers)},
      {"decoder_layers", SIZE_FIELD(model.decoder_layers)},
      {"classes", SIZE_FIELD(model.classes)},
      {"image_size", SIZE_FIELD(model.image_size)},
      {"stride", SIZE_FIELD(model.stride)},
      {"point_conv_channels", SIZE_FIELD(model.point_conv_channels)},
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be > 0");
  if (effective_decay_step() >= steps) {
    throw ConfigError("decay_step " + std::to_string(effective_decay_step()) + " must be < steps " +
                      std::to_string(steps));
  }
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  if (eval_interval == 0) throw ConfigError("eval_interval must be > 0");
  if (train_scenes == 0 || val_scenes == 0) throw ConfigError("train_scenes and val_scenes must be > 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (backbone_lr_scale < 0.0 || weight_decay < 0.0 || grad_clip < 0.0) {
    throw ConfigError("backbone_lr_scale, weight_decay and grad_clip must be >= 0");
  }
  try {
    ModelConfig m = model;
    m.aligner.heads = m.heads;
    m.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, key, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  apply_config_text(config, buf.str(), path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace samdetr
