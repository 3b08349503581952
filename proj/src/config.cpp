#include "idf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "idf/error.hpp"

namespace idf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double as_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::Config, key + ": not a number: '" + v + "'");
  return out;
}

std::uint64_t as_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::Config,
          key + ": not a non-negative integer: '" + v + "'");
  return out;
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::Config, key + ": not a boolean: '" + v + "'");
}

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string flag(bool v) { return v ? "true" : "false"; }

}  // namespace

void RunConfig::apply(const ConfigValues& values) {
  std::map<std::string, std::string> model_values;
  for (const auto& [key, v] : values) {
    if (key.rfind("model.", 0) == 0) {
      model_values[key.substr(6)] = v;
      continue;
    }
    // Training
    if (key == "train.lr") train.learning_rate = as_double(key, v);
    else if (key == "train.momentum") train.momentum = as_double(key, v);
    else if (key == "train.weight_decay") train.weight_decay = as_double(key, v);
    else if (key == "train.batch_size") train.batch_size = as_uint(key, v);
    else if (key == "train.epochs") train.epochs = as_uint(key, v);
    // Losses
    else if (key == "loss.lambda1") train.losses.distillation.lambda1 = as_double(key, v);
    else if (key == "loss.lambda2") train.losses.distillation.lambda2 = as_double(key, v);
    else if (key == "loss.w_spa") train.losses.enhancement.w_spa = as_double(key, v);
    else if (key == "loss.w_exp") train.losses.enhancement.w_exp = as_double(key, v);
    else if (key == "loss.w_tva") train.losses.enhancement.w_tva = as_double(key, v);
    else if (key == "loss.w_col") train.losses.enhancement.w_col = as_double(key, v);
    else if (key == "loss.spa_region") train.losses.enhancement.spa_region = as_uint(key, v);
    else if (key == "loss.exp_region") train.losses.enhancement.exp_region = as_uint(key, v);
    else if (key == "loss.exposure_target") train.losses.enhancement.exposure_target = as_double(key, v);
    else if (key == "loss.exp_squared") train.losses.enhancement.exp_squared = as_bool(key, v);
    // Data and evaluation
    else if (key == "data.dir") data_dir = v;
    else if (key == "data.train_fraction") train_fraction = as_double(key, v);
    else if (key == "eval.metric") eval.metric = parse_metric(v);
    else if (key == "eval.exclude_same_camera") eval.exclude_same_camera = as_bool(key, v);
    else if (key == "eval.probes_per_view") probes_per_view = as_uint(key, v);
    else if (key == "eval.top") eval.keep_top = as_uint(key, v);
    // Synthesis
    else if (key == "synth.identities") synth.identities = as_uint(key, v);
    else if (key == "synth.images_per_camera") synth.images_per_camera = as_uint(key, v);
    else if (key == "synth.cameras") synth.cameras = as_uint(key, v);
    else if (key == "synth.gamma_min") synth.gamma_min = as_double(key, v);
    else if (key == "synth.gamma_max") synth.gamma_max = as_double(key, v);
    else if (key == "synth.noise_sigma") synth.noise_sigma = as_double(key, v);
    else if (key == "synth.min_height") synth.min_height = as_uint(key, v);
    else if (key == "synth.max_height") synth.max_height = as_uint(key, v);
    // Run
    else if (key == "run.seed") seed = as_uint(key, v);
    else if (key == "run.out") out_dir = v;
    else fail(ErrorKind::Config, "unknown key '" + key + "'");
  }
  if (!model_values.empty()) {
    ConfigValues merged = model.to_map();
    for (auto& [k, v] : model_values) merged[k] = v;
    model = ModelConfig::from_map(merged);
  }
  train.seed = seed;
  synth.seed = seed;
}

ConfigValues RunConfig::to_values() const {
  ConfigValues out;
  for (const auto& [k, v] : model.to_map()) out["model." + k] = v;
  out["train.lr"] = num(train.learning_rate);
  out["train.momentum"] = num(train.momentum);
  out["train.weight_decay"] = num(train.weight_decay);
  out["train.batch_size"] = std::to_string(train.batch_size);
  out["train.epochs"] = std::to_string(train.epochs);
  const auto& d = train.losses.distillation;
  const auto& e = train.losses.enhancement;
  out["loss.lambda1"] = num(d.lambda1);
  out["loss.lambda2"] = num(d.lambda2);
  out["loss.w_spa"] = num(e.w_spa);
  out["loss.w_exp"] = num(e.w_exp);
  out["loss.w_tva"] = num(e.w_tva);
  out["loss.w_col"] = num(e.w_col);
  out["loss.spa_region"] = std::to_string(e.spa_region);
  out["loss.exp_region"] = std::to_string(e.exp_region);
  out["loss.exposure_target"] = num(e.exposure_target);
  out["loss.exp_squared"] = flag(e.exp_squared);
  out["data.dir"] = data_dir.string();
  out["data.train_fraction"] = num(train_fraction);
  out["eval.metric"] = std::string(to_string(eval.metric));
  out["eval.exclude_same_camera"] = flag(eval.exclude_same_camera);
  out["eval.probes_per_view"] = std::to_string(probes_per_view);
  out["eval.top"] = std::to_string(eval.keep_top);
  out["synth.identities"] = std::to_string(synth.identities);
  out["synth.images_per_camera"] = std::to_string(synth.images_per_camera);
  out["synth.cameras"] = std::to_string(synth.cameras);
  out["synth.gamma_min"] = num(synth.gamma_min);
  out["synth.gamma_max"] = num(synth.gamma_max);
  out["synth.noise_sigma"] = num(synth.noise_sigma);
  out["synth.min_height"] = std::to_string(synth.min_height);
  out["synth.max_height"] = std::to_string(synth.max_height);
  out["run.seed"] = std::to_string(seed);
  out["run.out"] = out_dir.string();
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_values()) out += k + "=" + v + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : RunConfig{}.to_values()) keys.push_back(k);
  return keys;
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  require(eq != std::string::npos, ErrorKind::Config, "expected key=value, got '" + text + "'");
  std::string key = trim(text.substr(0, eq));
  require(!key.empty(), ErrorKind::Config, "empty key in '" + text + "'");
  return {std::move(key), trim(text.substr(eq + 1))};
}

ConfigValues parse_config_text(const std::string& text, const std::string& origin) {
  ConfigValues values;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      auto [k, v] = parse_assignment(line);
      values[k] = v;
    } catch (const Error& e) {
      fail(ErrorKind::Config, origin + ":" + std::to_string(number) + ": expected key=value");
    }
  }
  return values;
}

ConfigValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

}  // namespace idf
