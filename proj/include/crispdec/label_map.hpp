#pragma once

#include <cstdint>
#include <vector>

namespace crispdec {

inline constexpr int32_t kIgnoreLabel = 255;

/// Single-image integer label map, row-major.
struct LabelMap {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<int32_t> data;

  LabelMap() = default;
  LabelMap(int64_t height, int64_t width, int32_t fill = 0)
      : h(height), w(width), data(height * width, fill) {}

  int32_t& at(int64_t y, int64_t x) { return data[y * w + x]; }
  int32_t at(int64_t y, int64_t x) const { return data[y * w + x]; }
  int64_t size() const { return h * w; }
  bool operator==(const LabelMap&) const = default;
};

using Mask = std::vector<uint8_t>;

/// Pixels whose label differs from at least one 4-neighbour, both labels
/// being real (non-IGNORE). Class-agnostic.
Mask label_boundary(const LabelMap& labels);

/// Pixels within Chebyshev distance < `band` of a set pixel. band <= 0
/// returns an empty mask; band 1 returns the input.
Mask chebyshev_band(const Mask& seeds, int64_t h, int64_t w, int band);

inline constexpr double kNoSiteDistance = 1e9;

/// Exact Euclidean distance from every pixel to the nearest set pixel, via
/// two separable passes of the 1-D lower-envelope transform. With no set
/// pixel at all every entry is kNoSiteDistance.
std::vector<double> euclidean_distance(const Mask& sites, int64_t h, int64_t w);

/// Horizontal mirror.
LabelMap flip_horizontal(const LabelMap& labels);

}  // namespace crispdec
