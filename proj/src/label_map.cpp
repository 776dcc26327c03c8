#include "crispdec/label_map.hpp"

#include <algorithm>
#include <cmath>

#include "crispdec/check.hpp"

namespace crispdec {

Mask label_boundary(const LabelMap& labels) {
  const int64_t h = labels.h, w = labels.w;
  require_shape(static_cast<int64_t>(labels.data.size()) == h * w, "label map size mismatch");
  Mask out(h * w, 0);
  auto differs = [&](int32_t a, int32_t b) {
    return a != kIgnoreLabel && b != kIgnoreLabel && a != b;
  };
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int32_t v = labels.at(y, x);
      if (x + 1 < w && differs(v, labels.at(y, x + 1))) out[y * w + x] = out[y * w + x + 1] = 1;
      if (y + 1 < h && differs(v, labels.at(y + 1, x))) out[y * w + x] = out[(y + 1) * w + x] = 1;
    }
  }
  return out;
}

Mask chebyshev_band(const Mask& seeds, int64_t h, int64_t w, int band) {
  Mask out(h * w, 0);
  if (band <= 0) return out;
  const int64_t r = band - 1;
  // Separable max filter: rows, then columns.
  Mask rows(h * w, 0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!seeds[y * w + x]) continue;
      for (int64_t xx = std::max<int64_t>(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
        rows[y * w + xx] = 1;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!rows[y * w + x]) continue;
      for (int64_t yy = std::max<int64_t>(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        out[yy * w + x] = 1;
    }
  return out;
}

namespace {

constexpr double kFar = 1e20;

// 1-D squared distance transform of sampled function f (lower envelope of
// parabolas rooted at each sample).
void squared_distance_1d(const std::vector<double>& f, std::vector<double>& d,
                         std::vector<int64_t>& v, std::vector<double>& z) {
  const int64_t n = static_cast<int64_t>(f.size());
  int64_t k = 0;
  v[0] = 0;
  z[0] = -kFar;
  z[1] = kFar;
  auto intersect = [&](int64_t q, int64_t p) {
    return ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
           (2.0 * static_cast<double>(q - p));
  };
  for (int64_t q = 1; q < n; ++q) {
    // z[0] = -kFar bounds the walk: every intersection lies above it.
    double s = intersect(q, v[k]);
    while (s <= z[k]) s = intersect(q, v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q - v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

std::vector<double> euclidean_distance(const Mask& sites, int64_t h, int64_t w) {
  require_shape(static_cast<int64_t>(sites.size()) == h * w, "distance: mask size mismatch");
  std::vector<double> grid(h * w);
  bool any = false;
  for (int64_t i = 0; i < h * w; ++i) {
    grid[i] = sites[i] ? 0.0 : kFar;
    any = any || sites[i];
  }
  if (!any) return std::vector<double>(h * w, kNoSiteDistance);

  const int64_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int64_t> v(n);
  // Columns first, then rows over the column result.
  f.resize(h);
  d.resize(h);
  for (int64_t x = 0; x < w; ++x) {
    for (int64_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    squared_distance_1d(f, d, v, z);
    for (int64_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
    squared_distance_1d(f, d, v, z);
    for (int64_t x = 0; x < w; ++x) grid[y * w + x] = std::sqrt(d[x]);
  }
  return grid;
}

LabelMap flip_horizontal(const LabelMap& labels) {
  LabelMap out(labels.h, labels.w);
  for (int64_t y = 0; y < labels.h; ++y)
    for (int64_t x = 0; x < labels.w; ++x) out.at(y, x) = labels.at(y, labels.w - 1 - x);
  return out;
}

}  // namespace crispdec
