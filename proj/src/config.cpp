// Copyright 2026 The oskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "oskit/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "oskit/error.hpp"

namespace oskit::config {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Keys accepted in each section.
const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"data",
       {"root", "train_images", "train_labels", "test_images", "test_labels", "outlier_images", "outlier_labels",
        "background_images", "background_labels", "known_classes", "train_fraction", "val_fraction",
        "background_count"}},
      {"net", {"layers", "feature_dim", "input"}},
      {"train",
       {"regime", "epochs", "batch_size", "lr", "lr_decay_factor", "lr_decay_every", "momentum", "weight_decay",
        "margin", "background_weight", "seed"}},
      {"detector", {"tpr", "tune_noise", "tune_noise_count", "methods"}},
      {"detector.odin", {"temperature", "epsilon"}},
      {"detector.openmax", {"tail_size", "alpha"}},
      {"detector.ocsvm", {"nu", "gamma", "tol", "cache_mb", "max_train"}},
      {"eval", {"runs", "n_each", "seed", "alpha", "tiers", "regimes", "grid_resolution", "grid_extent"}},
  };
  return s;
}

std::string key_name(const std::string& section, const std::string& key) {
  return fmt::format("[{}] {}", section, key);
}

template <class T>
T parse_number(const std::string& text, const std::string& section, const std::string& key) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(fmt::format("config key {}: '{}' is not a valid number", key_name(section, key), text));
  }
  return value;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string token;
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!token.empty()) out.push_back(std::move(token));
      token.clear();
    } else {
      token.push_back(c);
    }
  }
  if (!token.empty()) out.push_back(std::move(token));
  return out;
}

class Reader {
 public:
  explicit Reader(const IniFile& ini) : ini_(ini) {}

  const std::string& require(const std::string& s, const std::string& k) const { return ini_.require(s, k); }
  std::optional<std::string> find(const std::string& s, const std::string& k) const { return ini_.find(s, k); }

  double real(const std::string& s, const std::string& k, double fallback) const {
    const auto v = ini_.find(s, k);
    return v ? parse_number<double>(*v, s, k) : fallback;
  }
  double real(const std::string& s, const std::string& k) const { return parse_number<double>(require(s, k), s, k); }
  long long integer(const std::string& s, const std::string& k, long long fallback) const {
    const auto v = ini_.find(s, k);
    return v ? parse_number<long long>(*v, s, k) : fallback;
  }
  long long integer(const std::string& s, const std::string& k) const {
    return parse_number<long long>(require(s, k), s, k);
  }
  std::uint64_t seed(const std::string& s, const std::string& k, std::uint64_t fallback) const {
    const auto v = ini_.find(s, k);
    return v ? parse_number<std::uint64_t>(*v, s, k) : fallback;
  }
  bool boolean(const std::string& s, const std::string& k, bool fallback) const {
    const auto v = ini_.find(s, k);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(fmt::format("config key {}: '{}' is not a boolean", key_name(s, k), *v));
  }

 private:
  const IniFile& ini_;
};

void check_range(bool ok, const std::string& section, const std::string& key, std::string_view what) {
  if (!ok) throw ConfigError(fmt::format("config key {} {}", key_name(section, key), what));
}

net::Architecture parse_architecture(const Reader& r, int num_classes) {
  const std::string& layers = r.require("net", "layers");
  if (layers == "lenet++") {
    const auto dim = r.integer("net", "feature_dim", 2);
    check_range(dim > 0, "net", "feature_dim", "must be positive");
    return net::Architecture::lenet_plus_plus(num_classes, static_cast<int>(dim));
  }
  std::string text = "input " + r.find("net", "input").value_or("1 28 28") + "\n";
  for (char c : layers) text.push_back(c == ';' ? '\n' : c);
  text += fmt::format("\ndense {}\n", num_classes);
  try {
    auto arch = net::Architecture::parse(text);
    net::Network probe(arch);
    return arch;
  } catch (const Error& e) {
    throw ConfigError(fmt::format("config key {}: {}", key_name("net", "layers"), e.what()));
  }
}

}  // namespace

IniFile IniFile::parse(std::string_view text, std::string origin) {
  IniFile ini;
  ini.origin_ = std::move(origin);
  std::istringstream in{std::string(text)};
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(fmt::format("{}:{}: malformed section header", ini.origin_, line_no));
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(fmt::format("{}:{}: empty section name", ini.origin_, line_no));
      ini.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected key = value", ini.origin_, line_no));
    }
    if (section.empty()) throw ConfigError(fmt::format("{}:{}: key outside any section", ini.origin_, line_no));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", ini.origin_, line_no));
    if (!ini.sections_[section].emplace(key, value).second) {
      throw ConfigError(fmt::format("{}:{}: duplicate config key {}", ini.origin_, line_no, key_name(section, key)));
    }
  }
  return ini;
}

IniFile IniFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

bool IniFile::has(const std::string& section, const std::string& key) const { return find(section, key).has_value(); }

std::optional<std::string> IniFile::find(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

const std::string& IniFile::require(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s != sections_.end()) {
    const auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  throw ConfigError(fmt::format("missing config key {}", key_name(section, key)));
}

std::filesystem::path DataConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : root / p;
}

ToolkitConfig parse_config(const IniFile& ini, const std::filesystem::path& base_dir) {
  for (const auto& [section, keys] : ini.sections()) {
    const auto allowed = schema().find(section);
    if (allowed == schema().end()) throw ConfigError(fmt::format("unknown config section [{}]", section));
    for (const auto& [key, value] : keys) {
      if (!allowed->second.contains(key)) {
        throw ConfigError(fmt::format("unknown config key {}", key_name(section, key)));
      }
    }
  }
  const Reader r(ini);
  ToolkitConfig cfg;

  DataConfig& d = cfg.data;
  if (const auto root = r.find("data", "root")) {
    d.root = std::filesystem::path(*root).is_absolute() ? std::filesystem::path(*root) : base_dir / *root;
  } else if (const char* env = std::getenv("OSKIT_DATA_DIR"); env != nullptr && *env != '\0') {
    d.root = env;
  } else {
    d.root = base_dir / "data";
  }
  d.train_images = r.require("data", "train_images");
  d.train_labels = r.require("data", "train_labels");
  d.test_images = r.require("data", "test_images");
  d.test_labels = r.require("data", "test_labels");
  if (auto v = r.find("data", "outlier_images")) d.outlier_images = *v;
  if (auto v = r.find("data", "outlier_labels")) d.outlier_labels = *v;
  if (auto v = r.find("data", "background_images")) d.background_images = *v;
  if (auto v = r.find("data", "background_labels")) d.background_labels = *v;
  if (d.outlier_images.has_value() != d.outlier_labels.has_value()) {
    throw ConfigError("config keys [data] outlier_images and [data] outlier_labels must be given together");
  }
  if (d.background_images.has_value() != d.background_labels.has_value()) {
    throw ConfigError("config keys [data] background_images and [data] background_labels must be given together");
  }
  for (const auto& tok : split_list(r.require("data", "known_classes"))) {
    d.known_classes.push_back(static_cast<int>(parse_number<long long>(tok, "data", "known_classes")));
  }
  {
    auto sorted = d.known_classes;
    std::sort(sorted.begin(), sorted.end());
    check_range(sorted.size() >= 2 && std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "data",
                "known_classes", "needs at least two distinct classes");
  }
  d.train_fraction = r.real("data", "train_fraction", 1.0);
  check_range(d.train_fraction > 0.0 && d.train_fraction <= 1.0, "data", "train_fraction", "must lie in (0, 1]");
  d.val_fraction = r.real("data", "val_fraction", 0.1);
  check_range(d.val_fraction > 0.0 && d.val_fraction < 1.0, "data", "val_fraction", "must lie in (0, 1)");
  const auto bg_count = r.integer("data", "background_count", 0);
  check_range(bg_count >= 0, "data", "background_count", "must be non-negative");
  d.background_count = static_cast<std::size_t>(bg_count);

  const int k = static_cast<int>(d.known_classes.size());
  cfg.architecture = parse_architecture(r, k);

  net::TrainConfig& t = cfg.train;
  const std::string& regime = r.require("train", "regime");
  try {
    t.regime = net::parse_regime(regime);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("config key {}: {}", key_name("train", "regime"), e.what()));
  }
  t.epochs = static_cast<int>(r.integer("train", "epochs"));
  t.batch_size = static_cast<int>(r.integer("train", "batch_size", t.batch_size));
  t.lr = r.real("train", "lr", t.lr);
  t.lr_decay_factor = r.real("train", "lr_decay_factor", t.lr_decay_factor);
  t.lr_decay_every = static_cast<int>(r.integer("train", "lr_decay_every", t.lr_decay_every));
  t.momentum = r.real("train", "momentum", t.momentum);
  t.weight_decay = r.real("train", "weight_decay", t.weight_decay);
  t.entropic.margin = r.real("train", "margin", t.entropic.margin);
  t.entropic.background_weight = r.real("train", "background_weight", t.entropic.background_weight);
  t.seed = r.seed("train", "seed", t.seed);
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("[train]: {}", e.what()));
  }

  detect::DetectorOptions& o = cfg.detector;
  o.tpr = r.real("detector", "tpr", o.tpr);
  check_range(o.tpr > 0.0 && o.tpr <= 1.0, "detector", "tpr", "must lie in (0, 1]");
  o.odin.temperature = r.real("detector.odin", "temperature", o.odin.temperature);
  o.odin.epsilon = r.real("detector.odin", "epsilon", o.odin.epsilon);
  try {
    o.odin.validate();
  } catch (const Error& e) {
    throw ConfigError(fmt::format("[detector.odin]: {}", e.what()));
  }
  o.openmax.tail_size = static_cast<int>(r.integer("detector.openmax", "tail_size", o.openmax.tail_size));
  check_range(o.openmax.tail_size >= 3, "detector.openmax", "tail_size", "must be at least 3");
  o.openmax.alpha = static_cast<int>(r.integer("detector.openmax", "alpha", o.openmax.alpha));
  check_range(o.openmax.alpha >= 1, "detector.openmax", "alpha", "must be at least 1");
  o.ocsvm.nu = r.real("detector.ocsvm", "nu", o.ocsvm.nu);
  check_range(o.ocsvm.nu > 0.0 && o.ocsvm.nu <= 1.0, "detector.ocsvm", "nu", "must lie in (0, 1]");
  o.ocsvm.gamma = r.real("detector.ocsvm", "gamma", o.ocsvm.gamma);
  check_range(o.ocsvm.gamma >= 0.0, "detector.ocsvm", "gamma", "must be non-negative");
  o.ocsvm.tol = r.real("detector.ocsvm", "tol", o.ocsvm.tol);
  check_range(o.ocsvm.tol > 0.0, "detector.ocsvm", "tol", "must be positive");
  o.ocsvm.cache_mb = r.real("detector.ocsvm", "cache_mb", o.ocsvm.cache_mb);
  check_range(o.ocsvm.cache_mb > 0.0, "detector.ocsvm", "cache_mb", "must be positive");
  const auto max_train = r.integer("detector.ocsvm", "max_train", 2000);
  check_range(max_train >= 10, "detector.ocsvm", "max_train", "must be at least 10");
  cfg.tune.ocsvm_max_train = static_cast<std::size_t>(max_train);
  cfg.tune.enabled = r.boolean("detector", "tune_noise", true);
  const auto noise_count = r.integer("detector", "tune_noise_count", 500);
  check_range(noise_count >= 2, "detector", "tune_noise_count", "must be at least 2");
  cfg.tune.noise_count = static_cast<std::size_t>(noise_count);

  EvalConfig& e = cfg.eval;
  if (const auto v = r.find("detector", "methods")) {
    for (const auto& tok : split_list(*v)) {
      try {
        e.methods.push_back(detect::parse_method(tok));
      } catch (const ConfigError& err) {
        throw ConfigError(fmt::format("config key {}: {}", key_name("detector", "methods"), err.what()));
      }
    }
  } else {
    e.methods = detect::all_methods();
  }
  e.runs = static_cast<int>(r.integer("eval", "runs", e.runs));
  check_range(e.runs >= 1, "eval", "runs", "must be at least 1");
  const auto n_each = r.integer("eval", "n_each", 1000);
  check_range(n_each >= 2, "eval", "n_each", "must be at least 2");
  e.n_each = static_cast<std::size_t>(n_each);
  e.seed = r.seed("eval", "seed", e.seed);
  e.alpha = r.real("eval", "alpha", e.alpha);
  check_range(e.alpha > 0.0 && e.alpha < 1.0, "eval", "alpha", "must lie in (0, 1)");
  if (const auto v = r.find("eval", "tiers")) {
    e.tiers.clear();
    for (const auto& tok : split_list(*v)) {
      const auto tier = data::parse_tier(tok);
      if (!tier) throw ConfigError(fmt::format("config key {}: unknown tier '{}'", key_name("eval", "tiers"), tok));
      e.tiers.push_back(*tier);
    }
  }
  if (const auto v = r.find("eval", "regimes")) {
    e.regimes.clear();
    for (const auto& tok : split_list(*v)) {
      try {
        e.regimes.push_back(net::parse_regime(tok));
      } catch (const ConfigError& err) {
        throw ConfigError(fmt::format("config key {}: {}", key_name("eval", "regimes"), err.what()));
      }
    }
  }
  e.grid_resolution = static_cast<int>(r.integer("eval", "grid_resolution", e.grid_resolution));
  check_range(e.grid_resolution >= 50, "eval", "grid_resolution", "must be at least 50");
  e.grid_extent = r.real("eval", "grid_extent", e.grid_extent);
  check_range(e.grid_extent > 0.0, "eval", "grid_extent", "must be positive");
  return cfg;
}

ToolkitConfig load_config(const std::filesystem::path& path) {
  const IniFile ini = IniFile::load(path);
  return parse_config(ini, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

void check_training_inputs(const ToolkitConfig& config) {
  if (config.train.regime == net::LossRegime::kBackgroundReg && !config.data.background_images) {
    throw ConfigError("regime background_reg requires config key [data] background_images");
  }
}

}  // namespace oskit::config
