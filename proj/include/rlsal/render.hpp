#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlsal/saliency.hpp"
#include "rlsal/tensor.hpp"

namespace rlsal {

enum class NormalizationScope { PerFrame, PerVideo };

// Divisors at or below this leave a map untouched.
inline constexpr double kNormEpsilon = 1e-12;

// Signed maps land in [-1, 1], non-negative ones in [0, 1]. PerVideo shares
// one divisor across the whole batch.
std::vector<SaliencyMap> normalize(std::vector<SaliencyMap> maps, NormalizationScope scope);

// Multiplies every value by `gain` (applied before normalization).
SaliencyMap apply_gain(SaliencyMap map, double gain);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(std::size_t width, std::size_t height);
  Rgb pixel(std::size_t y, std::size_t x) const;
  void set(std::size_t y, std::size_t x, Rgb c);
  bool operator==(const Image&) const = default;
};

// Round half up, clamped to 0..255.
std::uint8_t to_byte(double value);

// Positive -> green, negative -> red. Throws RangeError for values outside
// [-1, 1] ([0, 1] for unsigned maps) or non-finite values.
Image colorize(const SaliencyMap& map);

// Per channel: round(opacity * round(255 * frame) + (1 - opacity) * color).
Image overlay(const Tensor& frame, const Image& colorized, double opacity = 0.5);

// Binary P6: "P6\n<w> <h>\n255\n" + raw RGB.
std::string encode_ppm(const Image& image);
Image decode_ppm(const std::string& bytes);
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

// One text row per map row, shortest round-trip decimals separated by spaces.
std::string format_map(const Tensor& map);
Tensor parse_map(const std::string& text);
void write_map(const Tensor& map, const std::filesystem::path& path);
Tensor read_map(const std::filesystem::path& path);

}  // namespace rlsal
