#include "trinet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "trinet/imageio.hpp"

namespace trinet::synth {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_uniform(rng);
}

// Lattice value in [0,1) for integer coordinates.
double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ull +
                                                 static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Smooth value noise in [0,1).
double value_noise(double u, double v, std::uint64_t seed) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto iu = static_cast<std::int64_t>(fu), iv = static_cast<std::int64_t>(fv);
  const double tu = smooth(u - fu), tv = smooth(v - fv);
  const double a = lattice(iu, iv, seed), b = lattice(iu + 1, iv, seed);
  const double c = lattice(iu, iv + 1, seed), d = lattice(iu + 1, iv + 1, seed);
  return (a * (1 - tu) + b * tu) * (1 - tv) + (c * (1 - tu) + d * tu) * tv;
}

// Three octaves; the coarse one gives the photometric loss a wide basin.
double fbm(double u, double v, std::uint64_t seed) {
  return 0.45 * value_noise(0.25 * u - 3.7, 0.25 * v + 8.9, seed ^ 0x2545f491u) +
         0.35 * value_noise(u, v, seed) + 0.2 * value_noise(2.0 * u + 17.3, 2.0 * v - 5.1, seed ^ 0x5bd1e995u);
}

constexpr double kGroundFocal = 128.0;

// Colour of layer `L` at layer coordinate (xt, y), xt already mirror-resolved.
void shade(const Layer& L, double xt, int y, double cx, double d_cont, float out[3]) {
  double u, v;
  if (L.texture == TextureKind::ground) {
    // Perspective ground: world X = (x - cx)/d, depth Z = f/d (baseline units).
    u = (xt - cx) / d_cont / L.period;
    v = kGroundFocal / d_cont / L.period;
  } else {
    u = xt / L.period;
    v = static_cast<double>(y) / L.period;
  }
  const double lum = 2.0 * fbm(u, v, L.texture_seed) - 1.0;
  for (int c = 0; c < 3; ++c) {
    const double tint = 2.0 * value_noise(u + 31.7 * (c + 1), v - 11.3 * (c + 1), L.texture_seed + 101 + c) - 1.0;
    const double val = L.color[c] + L.contrast * (lum + 0.25 * tint);
    out[c] = static_cast<float>(std::clamp(val, 0.0, 1.0));
  }
}

struct ViewRender {
  Tensor<float> image;
  Tensor<float> disparity;
  std::vector<int> layer_id;
};

// shift +1: left view (xc = x - d); 0: centre; -1: right view (xc = x + d).
ViewRender render_view(const SceneLayout& s, int shift) {
  const int H = s.height, W = s.width;
  ViewRender v{Tensor<float>({1, 3, H, W}), Tensor<float>({1, 1, H, W}),
               std::vector<int>(static_cast<std::size_t>(H) * W, -1)};
  const double cx = 0.5 * (W - 1);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int best = -1;
      double best_d = -1.0;
      for (std::size_t li = 0; li < s.layers.size(); ++li) {
        const Layer& L = s.layers[li];
        if (y < L.y0 || y >= L.y1) continue;
        const double d = L.disparity(y, s.integer_disparity);
        const double xc = x - shift * d;
        if (xc < L.x0 || xc >= L.x1) continue;
        if (d >= best_d) {
          best = static_cast<int>(li);
          best_d = d;
        }
      }
      if (best < 0) {
        throw std::invalid_argument("render: pixel (" + std::to_string(x) + "," + std::to_string(y) +
                                    ") is not covered by any layer");
      }
      const Layer& L = s.layers[static_cast<std::size_t>(best)];
      const double xc = x - shift * best_d;
      const double xt = s.mirrored ? (W - 1) - xc : xc;
      float rgb[3];
      shade(L, xt, y, cx, L.disparity(y, false), rgb);
      for (int c = 0; c < 3; ++c) v.image.at(0, c, y, x) = rgb[c];
      v.disparity.at(0, 0, y, x) = static_cast<float>(best_d);
      v.layer_id[static_cast<std::size_t>(y) * W + x] = best;
    }
  }
  return v;
}

// Centre pixel x with disparity d appears at x + side * d in the side view
// (side = +1 left, -1 right); occluded when out of bounds or a different
// layer is visible there.
Tensor<float> occlusion(const ViewRender& center, const ViewRender& other, int side, int H, int W) {
  Tensor<float> occ({1, 1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double d = center.disparity.at(0, 0, y, x);
      const double pos = x + side * d;
      const long xs = std::lround(pos);
      bool hidden = pos < 0.0 || pos > W - 1 || xs < 0 || xs > W - 1;
      if (!hidden) {
        hidden = other.layer_id[static_cast<std::size_t>(y) * W + xs] !=
                 center.layer_id[static_cast<std::size_t>(y) * W + x];
      }
      occ.at(0, 0, y, x) = hidden ? 1.0f : 0.0f;
    }
  return occ;
}

void add_noise(Tensor<float>& img, double amplitude, std::mt19937_64& rng) {
  for (auto& v : img.data()) {
    v = static_cast<float>(std::clamp(v + amplitude * (2.0 * unit_uniform(rng) - 1.0), 0.0, 1.0));
  }
}

void random_color(std::mt19937_64& rng, double out[3], double lo, double hi) {
  for (int c = 0; c < 3; ++c) out[c] = uniform(rng, lo, hi);
}

}  // namespace

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw std::invalid_argument("scene extents must be positive multiples of 8, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  if (layers < 0) throw std::invalid_argument("scene layer count must be non-negative");
  if (!(d_min > 0.0)) throw std::invalid_argument("scene d_min must be positive");
  if (!(d_max >= d_min)) throw std::invalid_argument("scene d_max must be >= d_min");
  if (d_max > dmax_frac * width) {
    throw std::invalid_argument("scene d_max " + std::to_string(d_max) + " exceeds dmax_frac * width = " +
                                std::to_string(dmax_frac * width));
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("scene noise must be non-negative");
}

double Layer::disparity(int y, bool integer) const {
  const double d = d_ref + slope * (y - y_ref);
  return integer ? std::round(d) : d;
}

SceneLayout generate_layout(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const int H = spec.height, W = spec.width;
  SceneLayout s;
  s.height = H;
  s.width = W;
  s.integer_disparity = spec.integer_disparity;

  const int horizon = static_cast<int>(std::lround(H * uniform(rng, 0.3, 0.5)));
  Layer wall;
  wall.y0 = 0;
  wall.y1 = horizon;
  wall.d_ref = spec.d_min;
  wall.texture_seed = rng();
  wall.period = 3.0 + 0.6 * spec.d_min;
  random_color(rng, wall.color, 0.45, 0.8);
  wall.contrast = uniform(rng, 0.15, 0.25);
  s.layers.push_back(wall);

  // Ground: d_min just below the horizon, growing linearly to the bottom row.
  const double d_bottom = std::max(spec.d_min, spec.d_max * uniform(rng, 0.45, 0.7));
  Layer ground;
  ground.y0 = horizon;
  ground.y1 = H;
  ground.y_ref = horizon;
  ground.slope = (d_bottom - spec.d_min) / std::max(1, H - 1 - horizon);
  ground.d_ref = spec.d_min;
  ground.texture = TextureKind::ground;
  ground.texture_seed = rng();
  ground.period = 1.0;
  random_color(rng, ground.color, 0.25, 0.6);
  ground.contrast = uniform(rng, 0.2, 0.3);
  s.layers.push_back(ground);

  std::vector<Layer> objects;
  for (int k = 0; k < spec.layers; ++k) {
    Layer o;
    const int y_bottom = static_cast<int>(uniform(rng, horizon + 3, H));
    const double d = std::clamp(ground.disparity(std::min(y_bottom, H - 1), false), spec.d_min, spec.d_max);
    const int h = std::max(3, static_cast<int>(std::lround(d * uniform(rng, 1.5, 3.0))));
    const double w = std::max(3.0, std::round(d * uniform(rng, 1.0, 3.0)));
    o.y1 = std::min(y_bottom, H - 1) + 1;
    o.y0 = std::max(0, o.y1 - h);
    o.x0 = std::round(uniform(rng, -0.3 * w, W - 0.7 * w));
    o.x1 = o.x0 + w;
    o.y_ref = o.y1 - 1;
    o.d_ref = d;
    o.slope = 0.0;
    const double lean = uniform(rng, 0.0, 1.0);
    if (spec.slanted && lean < 0.3) {
      // Tilted towards the camera at the top (or away), within range.
      const double want = uniform(rng, -0.15, 0.15) * d / std::max(1, o.y1 - o.y0);
      const double top = d + want * (o.y0 - o.y_ref);
      if (top >= spec.d_min && top <= spec.d_max) o.slope = want;
    }
    o.texture_seed = rng();
    o.period = 3.0 + 0.6 * d;
    random_color(rng, o.color, 0.15, 0.85);
    o.contrast = uniform(rng, 0.15, 0.3);
    objects.push_back(o);
  }
  std::stable_sort(objects.begin(), objects.end(),
                   [](const Layer& a, const Layer& b) { return a.d_ref < b.d_ref; });
  s.layers.insert(s.layers.end(), objects.begin(), objects.end());
  return s;
}

TrinocularSample render(const SceneLayout& layout, const SceneSpec& spec, std::uint64_t noise_seed) {
  spec.validate();
  if (layout.height != spec.height || layout.width != spec.width) {
    throw std::invalid_argument("render: layout extents differ from the spec");
  }
  const double tol = 1e-9;
  for (std::size_t i = 0; i < layout.layers.size(); ++i) {
    const Layer& L = layout.layers[i];
    for (int y = std::max(0, L.y0); y < std::min(L.y1, layout.height); ++y) {
      const double d = L.disparity(y, layout.integer_disparity);
      if (d < spec.d_min - tol || d > spec.d_max + tol) {
        throw std::invalid_argument("render: layer " + std::to_string(i) + " has disparity " +
                                    std::to_string(d) + " at row " + std::to_string(y) +
                                    " outside [" + std::to_string(spec.d_min) + ", " +
                                    std::to_string(spec.d_max) + "]");
      }
    }
  }
  const int H = layout.height, W = layout.width;
  ViewRender l = render_view(layout, +1);
  ViewRender c = render_view(layout, 0);
  ViewRender r = render_view(layout, -1);

  TrinocularSample out;
  out.occ_cl = occlusion(c, l, +1, H, W);
  out.occ_cr = occlusion(c, r, -1, H, W);
  out.gt_cl = c.disparity;
  out.gt_cr = c.disparity;
  out.gt_lc = l.disparity;
  out.gt_rc = r.disparity;
  out.il = std::move(l.image);
  out.ic = std::move(c.image);
  out.ir = std::move(r.image);
  if (spec.noise > 0.0) {
    std::mt19937_64 rng(noise_seed);
    add_noise(out.il, spec.noise, rng);
    add_noise(out.ic, spec.noise, rng);
    add_noise(out.ir, spec.noise, rng);
  }
  return out;
}

TrinocularSample generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  return render(generate_layout(spec, seed), spec, splitmix64(seed ^ 0xa0761d6478bd642full));
}

SceneLayout reflect(const SceneLayout& layout) {
  SceneLayout m = layout;
  m.mirrored = !layout.mirrored;
  for (auto& L : m.layers) {
    const double x0 = L.x0, x1 = L.x1;
    L.x0 = layout.width - x1;
    L.x1 = layout.width - x0;
  }
  return m;
}

TrinocularSample reflect(const TrinocularSample& s) {
  TrinocularSample m;
  m.il = flip_horizontal(s.ir);
  m.ic = flip_horizontal(s.ic);
  m.ir = flip_horizontal(s.il);
  m.gt_cl = flip_horizontal(s.gt_cr);
  m.gt_cr = flip_horizontal(s.gt_cl);
  if (!s.gt_rc.empty()) m.gt_lc = flip_horizontal(s.gt_rc);
  if (!s.gt_lc.empty()) m.gt_rc = flip_horizontal(s.gt_lc);
  m.occ_cl = flip_horizontal(s.occ_cr);
  m.occ_cr = flip_horizontal(s.occ_cl);
  return m;
}

train::StereoPair to_binocular(const TrinocularSample& sample, PairMode mode) {
  if (mode == PairMode::lc) return {sample.il, sample.ic};
  return {sample.ic, sample.ir};
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return splitmix64(splitmix64(dataset_seed) + static_cast<std::uint64_t>(index));
}

metrics::CameraModel synthetic_camera() { return {kGroundFocal, 0.54}; }

std::string describe(const SceneSpec& spec) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "height = " << spec.height << "\n"
     << "width = " << spec.width << "\n"
     << "layers = " << spec.layers << "\n"
     << "d_min = " << spec.d_min << "\n"
     << "d_max = " << spec.d_max << "\n"
     << "dmax_frac = " << spec.dmax_frac << "\n"
     << "integer_disparity = " << (spec.integer_disparity ? "true" : "false") << "\n"
     << "slanted = " << (spec.slanted ? "true" : "false") << "\n"
     << "noise = " << spec.noise << "\n";
  return os.str();
}

namespace {

std::filesystem::path scene_dir(const std::filesystem::path& root, std::size_t i) {
  std::ostringstream name;
  name << "scene_" << std::setw(6) << std::setfill('0') << i;
  return root / name.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t count,
                   std::uint64_t seed) {
  spec.validate();
  std::filesystem::create_directories(dir);
  const auto cam = synthetic_camera();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = sample_seed(seed, i);
    const TrinocularSample sample = generate_scene(spec, s);
    const auto sd = scene_dir(dir, i);
    std::filesystem::create_directories(sd);
    io::write_image(sd / "il.ppm", sample.il);
    io::write_image(sd / "ic.ppm", sample.ic);
    io::write_image(sd / "ir.ppm", sample.ir);
    io::write_image(sd / "gt_cl.pfm", sample.gt_cl);
    io::write_image(sd / "gt_cr.pfm", sample.gt_cr);
    io::write_image(sd / "occ_cl.pgm", sample.occ_cl);
    io::write_image(sd / "occ_cr.pgm", sample.occ_cr);
    std::ofstream meta(sd / "meta.txt");
    if (!meta) throw std::runtime_error("cannot write " + (sd / "meta.txt").string());
    meta << std::setprecision(17) << describe(spec) << "dataset_seed = " << seed << "\n"
         << "scene_index = " << i << "\n"
         << "scene_seed = " << s << "\n"
         << "focal = " << cam.focal << "\n"
         << "baseline = " << cam.baseline << "\n";
    if (!meta.good()) throw std::runtime_error("write failed: " + (sd / "meta.txt").string());
  }
}

std::vector<TrinocularSample> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
  }
  std::vector<TrinocularSample> out;
  for (std::size_t i = 0;; ++i) {
    const auto sd = scene_dir(dir, i);
    if (!std::filesystem::exists(sd)) break;
    TrinocularSample s;
    s.il = io::read_image(sd / "il.ppm");
    s.ic = io::read_image(sd / "ic.ppm");
    s.ir = io::read_image(sd / "ir.ppm");
    s.gt_cl = io::read_image(sd / "gt_cl.pfm");
    s.gt_cr = io::read_image(sd / "gt_cr.pfm");
    s.occ_cl = io::read_image(sd / "occ_cl.pgm");
    s.occ_cr = io::read_image(sd / "occ_cr.pgm");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("dataset directory " + dir.string() + " holds no scenes");
  return out;
}

}  // namespace trinet::synth
