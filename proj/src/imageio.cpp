#include "trinet/imageio.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace trinet::io {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::string& header,
          const std::vector<unsigned char>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out.good()) throw std::runtime_error("write failed: " + path.string());
}

// Whitespace/comment-separated header tokens with byte offsets.
class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string() + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  std::string token(bool allow_comments = true) {
    while (pos_ < bytes_.size()) {
      const unsigned char c = bytes_[pos_];
      if (allow_comments && c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size()) fail("unexpected end of header");
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t.push_back(static_cast<char>(bytes_[pos_++]));
    return t;
  }

  long integer(const char* what) {
    const std::size_t at = pos_;
    const std::string t = token();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (t.empty() || *end != '\0' || v <= 0) {
      pos_ = at;
      fail(std::string("invalid ") + what + " '" + t + "'");
    }
    return v;
  }

  double real(const char* what) {
    const std::size_t at = pos_;
    const std::string t = token(false);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || *end != '\0' || v == 0.0 || !std::isfinite(v)) {
      pos_ = at;
      fail(std::string("invalid ") + what + " '" + t + "'");
    }
    return v;
  }

  /// Exactly one whitespace byte separates the header from the raster.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing whitespace after header");
    ++pos_;
  }

  void require_payload(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(path_.string() + ": truncated raster, expected " + std::to_string(n) +
                       " bytes, found " + std::to_string(bytes_.size() - pos_) +
                       " at byte offset " + std::to_string(pos_));
    }
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::uint32_t bswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void check_image(const Tensor<float>& image, const std::filesystem::path& path) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw std::invalid_argument(path.string() + ": expected a [1,C,H,W] image, got " +
                                shape_str(image.shape()));
  }
}

void write_netpbm(const std::filesystem::path& path, const Tensor<float>& image, int channels) {
  if (image.dim(1) != channels) {
    throw std::invalid_argument(path.string() + ": format needs " + std::to_string(channels) +
                                " channels, image has " + std::to_string(image.dim(1)));
  }
  const int H = image.dim(2), W = image.dim(3);
  std::vector<unsigned char> body(static_cast<std::size_t>(H) * W * channels);
  std::size_t k = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(static_cast<double>(image.at(0, c, y, x)), 0.0, 1.0);
        body[k++] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  const std::string header = std::string(channels == 3 ? "P6" : "P5") + "\n" + std::to_string(W) +
                             " " + std::to_string(H) + "\n255\n";
  dump(path, header, body);
}

Tensor<float> read_netpbm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path,
                          int channels) {
  HeaderReader r(bytes, path);
  r.token();  // magic, already checked
  const long W = r.integer("width");
  const long H = r.integer("height");
  const long maxval = r.integer("maxval");
  if (maxval > 255) r.fail("only 8-bit maxval is supported, got " + std::to_string(maxval));
  r.end_of_header();
  const std::size_t n = static_cast<std::size_t>(W) * static_cast<std::size_t>(H) * channels;
  r.require_payload(n);
  Tensor<float> out({1, channels, static_cast<int>(H), static_cast<int>(W)});
  const unsigned char* p = bytes.data() + r.pos();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(0, c, y, x) = static_cast<float>(*p++) / static_cast<float>(maxval);
  return out;
}

void write_pfm(const std::filesystem::path& path, const Tensor<float>& image) {
  const int C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (C != 1 && C != 3) {
    throw std::invalid_argument(path.string() + ": PFM holds 1 or 3 channels, image has " +
                                std::to_string(C));
  }
  std::vector<unsigned char> body(static_cast<std::size_t>(H) * W * C * 4);
  std::size_t k = 0;
  for (int y = H - 1; y >= 0; --y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(image.at(0, c, y, x));
        if constexpr (std::endian::native == std::endian::big) bits = bswap32(bits);
        std::memcpy(body.data() + k, &bits, 4);
        k += 4;
      }
  const std::string header = std::string(C == 3 ? "PF" : "Pf") + "\n" + std::to_string(W) + " " +
                             std::to_string(H) + "\n-1.0\n";
  dump(path, header, body);
}

Tensor<float> read_pfm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path,
                       int channels) {
  HeaderReader r(bytes, path);
  r.token(false);
  const long W = r.integer("width");
  const long H = r.integer("height");
  const double scale = r.real("scale");
  r.end_of_header();
  const bool little = scale < 0.0;
  const std::size_t n = static_cast<std::size_t>(W) * static_cast<std::size_t>(H) * channels;
  r.require_payload(n * 4);
  Tensor<float> out({1, channels, static_cast<int>(H), static_cast<int>(W)});
  const unsigned char* p = bytes.data() + r.pos();
  const bool swap = little != (std::endian::native == std::endian::little);
  for (long y = H - 1; y >= 0; --y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits;
        std::memcpy(&bits, p, 4);
        p += 4;
        if (swap) bits = bswap32(bits);
        out.at(0, c, static_cast<int>(y), x) = std::bit_cast<float>(bits);
      }
  return out;
}

}  // namespace

void write_image(const std::filesystem::path& path, const Tensor<float>& image) {
  check_image(image, path);
  const std::string ext = lower_ext(path);
  if (ext == ".ppm") return write_netpbm(path, image, 3);
  if (ext == ".pgm") return write_netpbm(path, image, 1);
  if (ext == ".pfm") return write_pfm(path, image);
  throw std::invalid_argument(path.string() + ": unsupported image extension '" + ext + "'");
}

Tensor<float> read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 2) throw ParseError(path.string() + ": file too short for a magic number at byte offset 0");
  const std::string magic{static_cast<char>(bytes[0]), static_cast<char>(bytes[1])};
  if (magic == "P6") return read_netpbm(bytes, path, 3);
  if (magic == "P5") return read_netpbm(bytes, path, 1);
  if (magic == "PF") return read_pfm(bytes, path, 3);
  if (magic == "Pf") return read_pfm(bytes, path, 1);
  throw ParseError(path.string() + ": unknown magic '" + magic + "' at byte offset 0");
}

Tensor<float> heatmap(const Tensor<float>& disparity, float max_value) {
  if (disparity.rank() != 4 || disparity.dim(0) != 1 || disparity.dim(1) != 1) {
    throw std::invalid_argument("heatmap: expected a [1,1,H,W] map");
  }
  if (!(max_value > 0.0f)) {
    max_value = 0.0f;
    for (float v : disparity.data()) max_value = std::max(max_value, v);
    if (!(max_value > 0.0f)) max_value = 1.0f;
  }
  static constexpr float stops[5][3] = {
      {0.0f, 0.0f, 0.5f}, {0.0f, 0.6f, 1.0f}, {1.0f, 0.9f, 0.0f}, {1.0f, 0.2f, 0.0f}, {0.5f, 0.0f, 0.0f}};
  const int H = disparity.dim(2), W = disparity.dim(3);
  Tensor<float> out({1, 3, H, W}, 0.0f);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float v = disparity.at(0, 0, y, x);
      if (!(v >= 0.0f)) continue;
      const float t = std::min(v / max_value, 1.0f) * 4.0f;
      const int k = std::min(static_cast<int>(t), 3);
      const float f = t - static_cast<float>(k);
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = stops[k][c] + f * (stops[k + 1][c] - stops[k][c]);
    }
  return out;
}

}  // namespace trinet::io
