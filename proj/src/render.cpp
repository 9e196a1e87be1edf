#include "rlsal/render.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rlsal/errors.hpp"
#include "rlsal/weights_io.hpp"

namespace rlsal {

namespace {
double map_divisor(const SaliencyMap& m) {
  if (m.is_signed) return m.values.max_abs();
  double mx = 0.0;
  for (double v : m.values.data()) mx = std::max(mx, v);
  return mx;
}

void divide(SaliencyMap& m, double d) {
  if (!(d > kNormEpsilon)) return;
  for (double& v : m.values.data()) v /= d;
}
}  // namespace

std::vector<SaliencyMap> normalize(std::vector<SaliencyMap> maps, NormalizationScope scope) {
  if (maps.empty()) throw std::invalid_argument("normalize needs at least one map");
  if (scope == NormalizationScope::PerFrame) {
    for (auto& m : maps) divide(m, map_divisor(m));
    return maps;
  }
  double d = 0.0;
  for (const auto& m : maps) d = std::max(d, map_divisor(m));
  for (auto& m : maps) divide(m, d);
  return maps;
}

SaliencyMap apply_gain(SaliencyMap map, double gain) {
  if (!std::isfinite(gain) || (!map.is_signed && gain < 0.0)) throw RangeError("gain must be finite (and >= 0 for unsigned maps)");
  for (double& v : map.values.data()) v *= gain;
  return map;
}

Image::Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

Rgb Image::pixel(std::size_t y, std::size_t x) const {
  const std::size_t i = (y * width + x) * 3;
  return {rgb.at(i), rgb.at(i + 1), rgb.at(i + 2)};
}

void Image::set(std::size_t y, std::size_t x, Rgb c) {
  const std::size_t i = (y * width + x) * 3;
  rgb.at(i) = c.r;
  rgb.at(i + 1) = c.g;
  rgb.at(i + 2) = c.b;
}

std::uint8_t to_byte(double value) {
  const double r = std::floor(value + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

Image colorize(const SaliencyMap& map) {
  if (map.values.rank() != 2) throw DimensionError("colorize needs an H×W map");
  const double lo = map.is_signed ? -1.0 : 0.0;
  Image img(map.values.dim(1), map.values.dim(0));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = map.values.at(y, x);
      if (!(v >= lo && v <= 1.0))
        throw RangeError("saliency value " + format_double(v) + " outside the normalized range");
      if (v > 0.0) img.set(y, x, {0, to_byte(255.0 * v), 0});
      else if (v < 0.0) img.set(y, x, {to_byte(-255.0 * v), 0, 0});
    }
  return img;
}

Image overlay(const Tensor& frame, const Image& colorized, double opacity) {
  if (frame.rank() != 2 || frame.dim(0) != colorized.height || frame.dim(1) != colorized.width)
    throw DimensionError("overlay: frame " + to_string(frame.shape()) + " does not match a " +
                         std::to_string(colorized.height) + "x" + std::to_string(colorized.width) + " image");
  if (!(opacity >= 0.0 && opacity <= 1.0)) throw RangeError("overlay opacity must lie in [0, 1]");
  Image out(colorized.width, colorized.height);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double f = frame[i];
    if (!(f >= 0.0 && f <= 1.0)) throw RangeError("frame intensity outside [0, 1]");
    const double gray = to_byte(255.0 * f);
    for (std::size_t c = 0; c < 3; ++c)
      out.rgb[3 * i + c] = to_byte(opacity * gray + (1.0 - opacity) * colorized.rgb[3 * i + c]);
  }
  return out;
}

std::string encode_ppm(const Image& image) {
  if (image.rgb.size() != image.width * image.height * 3) throw DimensionError("image buffer size mismatch");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&]() {
    const std::string t = token();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw MalformedDocumentError("bad PPM header");
    return v;
  };
  if (token() != "P6") throw MalformedDocumentError("not a binary PPM (P6)");
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw MalformedDocumentError("only 8-bit PPM is supported");
  ++pos;  // single whitespace after maxval
  if (pos > bytes.size() || bytes.size() - pos != w * h * 3) throw MalformedDocumentError("PPM payload size mismatch");
  Image img(w, h);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.rgb.begin());
  return img;
}

namespace {
void write_bytes(const std::string& bytes, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}
}  // namespace

void write_ppm(const Image& image, const std::filesystem::path& path) { write_bytes(encode_ppm(image), path); }

Image read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_bytes(path));
  } catch (const MalformedDocumentError& e) {
    throw MalformedDocumentError(path.string() + ": " + e.what());
  }
}

std::string format_map(const Tensor& map) {
  if (map.rank() != 2) throw DimensionError("format_map needs an H×W map");
  std::string out;
  for (std::size_t y = 0; y < map.dim(0); ++y) {
    for (std::size_t x = 0; x < map.dim(1); ++x) {
      if (x) out += ' ';
      out += format_double(map.at(y, x));
    }
    out += '\n';
  }
  return out;
}

Tensor parse_map(const std::string& text) {
  std::istringstream is(text);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t n = 0;
    for (std::string tok; ls >> tok; ++n) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) throw MalformedDocumentError("bad map value '" + tok + "'");
      values.push_back(v);
    }
    if (rows == 0) cols = n;
    else if (n != cols) throw ShapeMismatchError("ragged map rows");
    ++rows;
  }
  if (rows == 0 || cols == 0) throw MalformedDocumentError("empty map");
  return Tensor({rows, cols}, std::move(values));
}

void write_map(const Tensor& map, const std::filesystem::path& path) { write_bytes(format_map(map), path); }

Tensor read_map(const std::filesystem::path& path) { return parse_map(read_bytes(path)); }

}  // namespace rlsal
