#include "trinet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace trinet::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& v) {
  N out{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) {
    throw std::invalid_argument("'" + v + "' is not a valid number");
  }
  if constexpr (std::is_floating_point_v<N>) {
    if (!std::isfinite(out)) throw std::invalid_argument("'" + v + "' is not finite");
  }
  return out;
}

template <typename N>
std::string format_number(N v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::logic_error("number formatting failed");
  return std::string(buf, end);
}

// Value codecs by type. The seed (uint64_t) shares the size_t codec.
static_assert(std::is_same_v<std::uint64_t, std::size_t>);
void decode(const std::string& v, int& out) { out = parse_number<int>(v); }
void decode(const std::string& v, std::size_t& out) { out = parse_number<std::size_t>(v); }
void decode(const std::string& v, double& out) { out = parse_number<double>(v); }
void decode(const std::string& v, bool& out) {
  if (v == "true" || v == "on" || v == "1") {
    out = true;
  } else if (v == "false" || v == "off" || v == "0") {
    out = false;
  } else {
    throw std::invalid_argument("'" + v + "' is not a boolean (true/false, on/off, 1/0)");
  }
}
void decode(const std::string& v, std::vector<int>& out) {
  out.clear();
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(trim(item)));
  if (out.empty()) throw std::invalid_argument("empty list");
}
void decode(const std::string& v, std::filesystem::path& out) { out = v; }
void decode(const std::string& v, synth::PairMode& out) {
  if (v == "lc") {
    out = synth::PairMode::lc;
  } else if (v == "cr") {
    out = synth::PairMode::cr;
  } else {
    throw std::invalid_argument("'" + v + "' is not a pair mode (lc or cr)");
  }
}

std::string encode(int v) { return format_number(v); }
std::string encode(std::size_t v) { return format_number(v); }
std::string encode(double v) { return format_number(v); }
std::string encode(bool v) { return v ? "true" : "false"; }
std::string encode(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_number(v[i]);
  return s;
}
std::string encode(const std::filesystem::path& v) { return v.string(); }
std::string encode(synth::PairMode v) { return v == synth::PairMode::lc ? "lc" : "cr"; }

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// `ref` maps a (const or mutable) RunConfig to the field it stores.
template <typename Ref>
Field field(std::string section, std::string key, Ref ref) {
  return {std::move(section), std::move(key),
          [ref](RunConfig& c, const std::string& v) { decode(v, ref(c)); },
          [ref](const RunConfig& c) { return encode(ref(c)); }};
}

#define TRINET_FIELD(section, key, expr) field(section, key, [](auto& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      TRINET_FIELD("run", "seed", seed),
      TRINET_FIELD("data", "count", data.count),
      TRINET_FIELD("data", "pair", data.pair),
      TRINET_FIELD("scene", "height", scene.height),
      TRINET_FIELD("scene", "width", scene.width),
      TRINET_FIELD("scene", "layers", scene.layers),
      TRINET_FIELD("scene", "d_min", scene.d_min),
      TRINET_FIELD("scene", "d_max", scene.d_max),
      TRINET_FIELD("scene", "integer_disparity", scene.integer_disparity),
      TRINET_FIELD("scene", "slanted", scene.slanted),
      TRINET_FIELD("scene", "noise", scene.noise),
      TRINET_FIELD("network", "encoder_channels", network.encoder_channels),
      TRINET_FIELD("network", "decoder_channels", network.decoder_channels),
      TRINET_FIELD("network", "dmax_frac", network.dmax_frac),
      TRINET_FIELD("network", "single_decoder", network.single_decoder),
      TRINET_FIELD("train", "epochs", plan.epochs),
      TRINET_FIELD("train", "batch_size", plan.batch_size),
      TRINET_FIELD("train", "learning_rate", plan.learning_rate),
      TRINET_FIELD("train", "flip", plan.augmentation.flip),
      TRINET_FIELD("train", "color_jitter", plan.augmentation.color_jitter),
      TRINET_FIELD("train", "checkpoint_every", plan.checkpoint_every),
      TRINET_FIELD("train", "validate_every", plan.validate_every),
      TRINET_FIELD("loss", "alpha", loss.alpha),
      TRINET_FIELD("loss", "beta_ap", loss.beta_ap),
      TRINET_FIELD("loss", "beta_ds", loss.beta_ds),
      TRINET_FIELD("loss", "beta_lcr", loss.beta_lcr),
      TRINET_FIELD("loss", "beta_cc", loss.beta_cc),
      TRINET_FIELD("loss", "attenuate_smoothness", loss.attenuate_smoothness),
      TRINET_FIELD("loss", "center_consistency", loss.center_consistency),
      TRINET_FIELD("loss", "width_normalized", loss.width_normalized),
      TRINET_FIELD("sgm", "max_disparity", sgm.max_disparity),
      TRINET_FIELD("sgm", "census_window", sgm.census_window),
      TRINET_FIELD("sgm", "p1", sgm.p1),
      TRINET_FIELD("sgm", "p2", sgm.p2),
      TRINET_FIELD("sgm", "paths", sgm.paths),
      TRINET_FIELD("sgm", "uniqueness_check", sgm.uniqueness_check),
      TRINET_FIELD("eval", "cap", eval.cap),
      TRINET_FIELD("eval", "post_process", eval.post_process),
      TRINET_FIELD("eval", "focal", eval.camera.focal),
      TRINET_FIELD("eval", "baseline", eval.camera.baseline),
      TRINET_FIELD("paths", "data", paths.data),
      TRINET_FIELD("paths", "val", paths.val),
      TRINET_FIELD("paths", "out", paths.out),
      TRINET_FIELD("paths", "checkpoint", paths.checkpoint),
  };
  return all;
}

#undef TRINET_FIELD

}  // namespace

void RunConfig::resolve() {
  network.height = scene.height;
  network.width = scene.width;
  scene.dmax_frac = network.dmax_frac;
  network.seed = seed;
  plan.seed = seed;
}

void RunConfig::validate() {
  resolve();
  try {
    if (data.count == 0) throw std::invalid_argument("data.count must be positive");
    if (!(eval.cap > 0.0)) throw std::invalid_argument("eval.cap must be positive");
    scene.validate();
    network.validate();
    plan.validate();
    loss.validate();
    // The disparity range is checked against the images SGM actually runs on.
    sgm.validate(std::numeric_limits<int>::max());
    eval.camera.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

RunConfig parse(std::istream& in, const std::string& source) {
  std::map<std::string, const Field*> by_name;
  std::set<std::string> sections;
  for (const auto& f : fields()) {
    by_name[f.section + "." + f.key] = &f;
    sections.insert(f.section);
  }

  RunConfig config;
  std::set<std::string> seen;
  std::string section, line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (!sections.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + t + "'");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string key = trim(t.substr(0, eq));
    const std::string name = section + "." + key;
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(name).second) throw ConfigError(where + "duplicate key '" + key + "' in [" + section + "]");
    try {
      it->second->set(config, trim(t.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + name + ": " + e.what());
    }
  }
  if (in.bad()) throw ConfigError(source + ": read error");
  config.resolve();
  return config;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

std::string to_text(const RunConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    const std::string v = f.get(config);
    out += f.key + " =" + (v.empty() ? "" : " " + v) + "\n";
  }
  return out;
}

void echo(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "config.ini";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text(config);
  if (!out.good()) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace trinet::config
