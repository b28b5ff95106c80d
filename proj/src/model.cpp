#include "trinet/model.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace trinet::model {

using ad::Tape;
using ad::Var;

namespace {

constexpr int kEncoderStages = 4;

std::atomic<std::uint64_t> g_forwards{0};

struct LayerSpec {
  std::string name;  // without the .w / .b suffix
  ParamGroup group;
  int cin, cout;
};

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

int heads_per_decoder(const NetworkConfig& c) { return c.single_decoder ? 4 : 2; }

void append_decoder(const NetworkConfig& c, const std::string& prefix, ParamGroup g,
                    std::vector<LayerSpec>& out) {
  const int heads = heads_per_decoder(c);
  int prev = c.encoder_channels.back();
  for (int j = 0; j < kScales; ++j) {
    const int k = kScales - 1 - j;
    const int ch = c.decoder_channels[static_cast<std::size_t>(j)];
    const std::string s = prefix + ".s" + std::to_string(k);
    out.push_back({s + ".up", g, prev, ch});
    const int skip = k >= 1 ? c.encoder_channels[static_cast<std::size_t>(k - 1)] : 0;
    const int coarse_head = j > 0 ? heads : 0;
    out.push_back({s + ".iconv", g, ch + skip + coarse_head, ch});
    out.push_back({s + ".head", g, ch, heads});
    prev = ch;
  }
}

std::vector<LayerSpec> architecture(const NetworkConfig& c) {
  std::vector<LayerSpec> layers;
  int in = 3;
  for (int i = 0; i < kEncoderStages; ++i) {
    const int ch = c.encoder_channels[static_cast<std::size_t>(i)];
    const std::string s = "enc." + std::to_string(i);
    layers.push_back({s + ".down", ParamGroup::encoder, in, ch});
    if (i + 1 < kEncoderStages) layers.push_back({s + ".conv", ParamGroup::encoder, ch, ch});
    in = ch;
  }
  if (c.single_decoder) {
    append_decoder(c, "dec", ParamGroup::left_decoder, layers);
  } else {
    append_decoder(c, "left", ParamGroup::left_decoder, layers);
    append_decoder(c, "right", ParamGroup::right_decoder, layers);
  }
  return layers;
}

// Uniform double in [0,1) from the top 53 bits; stable across standard libraries.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Layers are looked up positionally: entries are (w, b) pairs in architecture order.
struct Cursor {
  const BoundParams& bound;
  std::size_t next = 0;
  std::pair<Var<float>, Var<float>> take() {
    auto w = bound.vars.at(next);
    auto b = bound.vars.at(next + 1);
    next += 2;
    return {w, b};
  }
};

Var<float> conv_layer(Var<float> x, std::pair<Var<float>, Var<float>> wb, int stride) {
  return ad::add_channel_bias(ad::conv2d(x, wb.first, stride, 1), wb.second);
}

const DispTag kSingleOrder[4] = {DispTag::cl, DispTag::lc, DispTag::cr, DispTag::rc};

void run_decoder(const NetworkConfig& c, Cursor& cur, const std::vector<Var<float>>& feats,
                 DispTag center_tag, DispTag side_tag, DisparityOutputs<Var<float>>& out) {
  const int heads = heads_per_decoder(c);
  Var<float> prev = feats.back();
  Var<float> prev_head;
  for (int j = 0; j < kScales; ++j) {
    const int k = kScales - 1 - j;
    Var<float> up = ad::elu(conv_layer(prev, cur.take(), 1));
    if (j > 0) up = ad::upsample2x(up);
    std::vector<Var<float>> parts{up};
    if (k >= 1) parts.push_back(feats[static_cast<std::size_t>(k - 1)]);
    if (j > 0) parts.push_back(ad::upsample2x(prev_head));
    Var<float> iconv = ad::elu(conv_layer(ad::concat_channels(parts), cur.take(), 1));
    Var<float> head = ad::sigmoid(conv_layer(iconv, cur.take(), 1));
    const float scale = static_cast<float>(c.dmax_frac * (c.width >> k));
    if (heads == 4) {
      for (int h = 0; h < 4; ++h) out[kSingleOrder[h]].push_back(ad::slice_channels(head, h, 1) * scale);
    } else {
      out[center_tag].push_back(ad::slice_channels(head, 0, 1) * scale);
      out[side_tag].push_back(ad::slice_channels(head, 1, 1) * scale);
    }
    prev = iconv;
    prev_head = head;
  }
}

// Decoder outputs are appended finest-last; pyramids are stored finest-first.
void reverse_levels(DisparityOutputs<Var<float>>& out) {
  for (auto& p : out.pyramids) std::reverse(p.begin(), p.end());
}

std::string config_line(const NetworkConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "config height=" << c.height << " width=" << c.width
     << " encoder=" << join(c.encoder_channels) << " decoder=" << join(c.decoder_channels)
     << " dmax_frac=" << c.dmax_frac << " seed=" << c.seed
     << " single_decoder=" << (c.single_decoder ? 1 : 0);
  return os.str();
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

NetworkConfig parse_config_line(const std::string& line, const std::filesystem::path& path) {
  std::istringstream is(line);
  std::string word;
  is >> word;
  if (word != "config") throw std::runtime_error(path.string() + ": expected config line");
  NetworkConfig c;
  while (is >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path.string() + ": bad config token " + word);
    const std::string key = word.substr(0, eq), val = word.substr(eq + 1);
    if (key == "height") c.height = std::stoi(val);
    else if (key == "width") c.width = std::stoi(val);
    else if (key == "encoder") c.encoder_channels = parse_int_list(val);
    else if (key == "decoder") c.decoder_channels = parse_int_list(val);
    else if (key == "dmax_frac") c.dmax_frac = std::stod(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "single_decoder") c.single_decoder = val == "1";
    else throw std::runtime_error(path.string() + ": unknown config key " + key);
  }
  c.validate();
  return c;
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void NetworkConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw std::invalid_argument("network input extents must be positive multiples of 8, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  if (encoder_channels.size() != kEncoderStages) {
    throw std::invalid_argument("network needs exactly 4 encoder stages, got " +
                                std::to_string(encoder_channels.size()));
  }
  if (decoder_channels.size() != kScales) {
    throw std::invalid_argument("network needs exactly 4 decoder stages, got " +
                                std::to_string(decoder_channels.size()));
  }
  for (int c : encoder_channels)
    if (c <= 0) throw std::invalid_argument("encoder channel widths must be positive");
  for (int c : decoder_channels)
    if (c <= 0) throw std::invalid_argument("decoder channel widths must be positive");
  if (!(dmax_frac > 0.0 && dmax_frac < 1.0)) {
    throw std::invalid_argument("dmax_frac must lie in (0,1)");
  }
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::left_decoder: return "left_decoder";
    case ParamGroup::right_decoder: return "right_decoder";
  }
  return "?";
}

NetworkParams::NetworkParams(NetworkConfig config, std::vector<NamedParam> entries)
    : config_(std::move(config)), entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!lookup_.emplace(entries_[i].name, i).second) {
      throw std::invalid_argument("duplicate parameter name " + entries_[i].name);
    }
  }
}

std::size_t NetworkParams::index(const std::string& name) const {
  const auto it = lookup_.find(name);
  if (it == lookup_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::size_t NetworkParams::scalar_count(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.group == g) n += e.value.numel();
  return n;
}

bool NetworkParams::operator==(const NetworkParams& other) const {
  if (!(config_ == other.config_) || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.group != b.group || a.value.shape() != b.value.shape()) return false;
    if (std::memcmp(a.value.data().data(), b.value.data().data(), a.value.numel() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

NetworkParams init_network(const NetworkConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::vector<NamedParam> entries;
  for (const auto& l : architecture(config)) {
    Tensor<float> w({l.cout, l.cin, 3, 3});
    // Disparity heads start near sigmoid(0): a uniform mid-range disparity
    // whatever the seed, instead of a random offset that can start a
    // decoder with saturated outputs.
    const bool head = l.name.ends_with(".head");
    const double bound = std::sqrt(6.0 / (l.cin * 9.0)) * (head ? 0.1 : 1.0);
    for (auto& v : w.data()) v = static_cast<float>((2.0 * unit_uniform(rng) - 1.0) * bound);
    entries.push_back({l.name + ".w", l.group, std::move(w)});
    entries.push_back({l.name + ".b", l.group, Tensor<float>({l.cout}, 0.0f)});
  }
  return NetworkParams(config, std::move(entries));
}

std::size_t expected_parameter_count(const NetworkConfig& config) {
  config.validate();
  std::size_t n = 0;
  for (const auto& l : architecture(config)) {
    n += static_cast<std::size_t>(l.cout) * l.cin * 9 + static_cast<std::size_t>(l.cout);
  }
  return n;
}

ParamPartition param_partition(const NetworkParams& params) {
  ParamPartition p;
  for (const auto& e : params.entries()) {
    switch (e.group) {
      case ParamGroup::encoder: p.encoder.insert(e.name); break;
      case ParamGroup::left_decoder: p.left.insert(e.name); break;
      case ParamGroup::right_decoder: p.right.insert(e.name); break;
    }
  }
  return p;
}

BoundParams bind_params(Tape<float>& tape, const NetworkParams& params, bool trainable) {
  BoundParams b;
  b.vars.reserve(params.size());
  for (const auto& e : params.entries()) {
    b.vars.push_back(trainable ? tape.leaf(e.value) : tape.constant(e.value));
  }
  return b;
}

DisparityOutputs<Var<float>> forward(const NetworkParams& params, const BoundParams& bound,
                                     Var<float> image, Decoders which) {
  const NetworkConfig& c = params.config();
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != c.height || s[3] != c.width) {
    throw std::invalid_argument("forward: expected image [B,3," + std::to_string(c.height) + "," +
                                std::to_string(c.width) + "], got " + shape_str(s));
  }
  if (bound.vars.size() != params.size()) {
    throw std::invalid_argument("forward: bound parameters do not match the network");
  }
  g_forwards.fetch_add(1, std::memory_order_relaxed);

  Cursor cur{bound};
  std::vector<Var<float>> feats;
  Var<float> x = image;
  for (int i = 0; i < kEncoderStages; ++i) {
    const bool last = i + 1 == kEncoderStages;
    x = ad::elu(conv_layer(x, cur.take(), last ? 1 : 2));
    if (!last) x = ad::elu(conv_layer(x, cur.take(), 1));
    feats.push_back(x);
  }

  DisparityOutputs<Var<float>> out;
  if (c.single_decoder) {
    run_decoder(c, cur, feats, DispTag::cl, DispTag::lc, out);
  } else {
    const std::size_t per_decoder = (bound.vars.size() - cur.next) / 2;
    if (which != Decoders::right) run_decoder(c, cur, feats, DispTag::cl, DispTag::lc, out);
    else cur.next += per_decoder;
    if (which != Decoders::left) run_decoder(c, cur, feats, DispTag::cr, DispTag::rc, out);
  }
  reverse_levels(out);
  return out;
}

DisparityOutputs<Tensor<float>> forward(const NetworkParams& params, const Tensor<float>& image) {
  Tape<float> tape;
  const BoundParams bound = bind_params(tape, params, false);
  const auto vars = forward(params, bound, tape.constant(image), Decoders::both);
  DisparityOutputs<Tensor<float>> out;
  for (std::size_t t = 0; t < 4; ++t)
    for (const auto& v : vars.pyramids[t]) out.pyramids[t].push_back(v.value());
  return out;
}

std::uint64_t forward_count() { return g_forwards.load(std::memory_order_relaxed); }

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto manifest_path = dir / "model.manifest";
  const auto blob_path = dir / "model.bin";
  std::ofstream manifest(manifest_path);
  std::ofstream blob(blob_path, std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path.string());
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());

  manifest << "trinet-checkpoint 1\n" << config_line(params.config()) << "\n";
  manifest << "params " << params.size() << " scalars " << params.scalar_count() << "\n";
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    std::vector<int> dims(e.value.shape().begin(), e.value.shape().end());
    std::string shape;
    for (std::size_t i = 0; i < dims.size(); ++i) shape += (i ? "x" : "") + std::to_string(dims[i]);
    manifest << e.name << ' ' << to_string(e.group) << ' ' << shape << ' ' << offset << "\n";
    for (float v : e.value.data()) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(v));
      blob.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += e.value.numel() * sizeof(float);
  }
  if (!manifest.good()) throw std::runtime_error("write failed: " + manifest_path.string());
  if (!blob.good()) throw std::runtime_error("write failed: " + blob_path.string());
}

NetworkParams load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "model.manifest";
  const auto blob_path = dir / "model.bin";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open " + manifest_path.string());
  std::string line;
  if (!std::getline(manifest, line) || line != "trinet-checkpoint 1") {
    throw std::runtime_error(manifest_path.string() + ": not a checkpoint manifest");
  }
  if (!std::getline(manifest, line)) throw std::runtime_error(manifest_path.string() + ": truncated");
  NetworkParams params = init_network(parse_config_line(line, manifest_path));
  if (!std::getline(manifest, line)) throw std::runtime_error(manifest_path.string() + ": truncated");
  const std::string counts = "params " + std::to_string(params.size()) + " scalars " +
                             std::to_string(params.scalar_count());
  if (line != counts) {
    throw std::runtime_error(manifest_path.string() + ": expected '" + counts + "', found '" + line + "'");
  }

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open " + blob_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  if (bytes.size() != params.scalar_count() * sizeof(float)) {
    throw std::runtime_error(blob_path.string() + ": expected " +
                             std::to_string(params.scalar_count() * sizeof(float)) + " bytes, found " +
                             std::to_string(bytes.size()));
  }

  for (auto& e : params.entries()) {
    std::string name, group, shape;
    std::size_t offset = 0;
    if (!std::getline(manifest, line)) throw std::runtime_error(manifest_path.string() + ": truncated");
    std::istringstream is(line);
    if (!(is >> name >> group >> shape >> offset)) {
      throw std::runtime_error(manifest_path.string() + ": malformed entry '" + line + "'");
    }
    std::string expect_shape;
    for (std::size_t i = 0; i < e.value.shape().size(); ++i)
      expect_shape += (i ? "x" : "") + std::to_string(e.value.shape()[i]);
    if (name != e.name || group != to_string(e.group) || shape != expect_shape) {
      throw std::runtime_error(manifest_path.string() + ": entry '" + line + "' does not match " +
                               e.name + " " + expect_shape);
    }
    if (offset + e.value.numel() * sizeof(float) > bytes.size()) {
      throw std::runtime_error(manifest_path.string() + ": offset out of range for " + name);
    }
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + offset + i * sizeof bits, sizeof bits);
      e.value[i] = std::bit_cast<float>(to_little_endian(bits));
    }
  }
  while (std::getline(manifest, line)) {
    if (!line.empty()) {
      throw std::runtime_error(manifest_path.string() + ": unexpected trailing entry '" + line + "'");
    }
  }
  return params;
}

}  // namespace trinet::model
