#pragma once

// Brute-force reference implementations of the mask metrics and a zoo of
// hand-built masks, shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "crispdec/label_map.hpp"

namespace testoracle {

using namespace crispdec;

using Pred = std::function<bool(int64_t, int64_t)>;

inline LabelMap paint(int64_t h, int64_t w, const Pred& fg, int32_t label = 1) {
  LabelMap m(h, w, 0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (fg(y, x)) m.at(y, x) = label;
  return m;
}

inline Mask binary(const LabelMap& m, int32_t c = 1) {
  Mask out(m.size());
  for (int64_t i = 0; i < m.size(); ++i) out[i] = m.data[i] == c;
  return out;
}

// Hand-built shapes, all on a 24 x 24 canvas.
inline std::vector<std::pair<std::string, LabelMap>> shape_zoo() {
  const int64_t n = 24;
  std::vector<std::pair<std::string, LabelMap>> z;
  auto add = [&](std::string name, Pred p) { z.emplace_back(std::move(name), paint(n, n, p)); };
  add("empty", [](auto, auto) { return false; });
  add("full", [](auto, auto) { return true; });
  add("pixel", [](auto y, auto x) { return y == 5 && x == 7; });
  add("square3", [](auto y, auto x) { return y >= 4 && y < 7 && x >= 4 && x < 7; });
  add("square10", [](auto y, auto x) { return y >= 2 && y < 12 && x >= 9 && x < 19; });
  add("rect4x9", [](auto y, auto x) { return y >= 10 && y < 14 && x >= 3 && x < 12; });
  add("hbar", [](auto y, auto x) { return y == 12 && x >= 2 && x < 22; });
  add("vbar", [](auto y, auto x) { return x == 3 && y >= 1 && y < 20; });
  add("diagonal", [](auto y, auto x) { return y == x && y >= 2 && y < 20; });
  add("stair2", [](auto y, auto x) { return y >= 2 && y < 20 && (x == y || x == y + 1); });
  add("disk6", [](auto y, auto x) { return (y - 11) * (y - 11) + (x - 12) * (x - 12) <= 36; });
  add("ring", [](auto y, auto x) {
    const auto r2 = (y - 12) * (y - 12) + (x - 12) * (x - 12);
    return r2 <= 64 && r2 > 16;
  });
  add("lshape", [](auto y, auto x) { return (y >= 4 && y < 18 && x >= 4 && x < 8) || (y >= 14 && y < 18 && x >= 4 && x < 16); });
  add("cross", [](auto y, auto x) { return (y >= 10 && y < 14 && x >= 3 && x < 21) || (x >= 10 && x < 14 && y >= 3 && y < 21); });
  add("checker", [](auto y, auto x) { return (y + x) % 2 == 0; });
  add("stripes", [](auto y, auto) { return (y / 3) % 2 == 1; });
  add("halfplane", [](auto, auto x) { return x >= 12; });
  add("corner_block", [](auto y, auto x) { return y < 6 && x < 6; });
  add("two_blobs", [](auto y, auto x) { return (y >= 2 && y < 6 && x >= 2 && x < 6) || (y >= 15 && y < 21 && x >= 15 && x < 21); });
  add("triangle", [](auto y, auto x) { return y >= 3 && y < 21 && x >= 3 && x <= y; });
  std::mt19937_64 rng(11);
  LabelMap noise(n, n, 0);
  for (auto& v : noise.data) v = static_cast<int32_t>(rng() % 2);
  z.emplace_back("noise", noise);
  return z;
}

// Independent oracles -------------------------------------------------------

inline int64_t oracle_transitions(const Mask& m, int64_t h, int64_t w) {
  int64_t t = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 1; x < w; ++x) t += m[y * w + x] != m[y * w + x - 1];
  for (int64_t x = 0; x < w; ++x)
    for (int64_t y = 1; y < h; ++y) t += m[y * w + x] != m[(y - 1) * w + x];
  return t;
}

// Perimeter as transitions in a zero-padded copy.
inline int64_t oracle_perimeter(const Mask& m, int64_t h, int64_t w) {
  Mask padded((h + 2) * (w + 2), 0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) padded[(y + 1) * (w + 2) + x + 1] = m[y * w + x];
  return oracle_transitions(padded, h + 2, w + 2);
}

inline std::vector<std::pair<int64_t, int64_t>> oracle_boundary(const LabelMap& m) {
  std::vector<std::pair<int64_t, int64_t>> out;
  const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
  for (int64_t y = 0; y < m.h; ++y)
    for (int64_t x = 0; x < m.w; ++x) {
      if (m.at(y, x) == kIgnoreLabel) continue;
      for (int k = 0; k < 4; ++k) {
        const int64_t yy = y + dy[k], xx = x + dx[k];
        if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w) continue;
        if (m.at(yy, xx) != kIgnoreLabel && m.at(yy, xx) != m.at(y, x)) {
          out.emplace_back(y, x);
          break;
        }
      }
    }
  return out;
}

inline double oracle_bf1(const LabelMap& pred, const LabelMap& gt, int band) {
  const auto pb = oracle_boundary(pred), gb = oracle_boundary(gt);
  if (pb.empty() && gb.empty()) return 1.0;
  if (pb.empty() || gb.empty()) return 0.0;
  auto near = [&](const auto& p, const auto& set) {
    for (const auto& q : set)
      if (std::max(std::abs(p.first - q.first), std::abs(p.second - q.second)) < band) return true;
    return false;
  };
  double hp = 0, hg = 0;
  for (const auto& p : pb) hp += near(p, gb);
  for (const auto& g : gb) hg += near(g, pb);
  const double prec = hp / pb.size(), rec = hg / gb.size();
  return prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
}

inline double oracle_miou(const LabelMap& pred, const LabelMap& gt, int k) {
  double sum = 0;
  int counted = 0;
  for (int c = 0; c < k; ++c) {
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < gt.size(); ++i) {
      if (gt.data[i] == kIgnoreLabel) continue;
      const bool a = pred.data[i] == c, b = gt.data[i] == c;
      inter += a && b;
      uni += a || b;
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / uni;
    ++counted;
  }
  return counted ? sum / counted : 0.0;
}

inline LabelMap shift_right(const LabelMap& m, int64_t s) {
  LabelMap out(m.h, m.w, 0);
  for (int64_t y = 0; y < m.h; ++y)
    for (int64_t x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, std::max<int64_t>(0, x - s));
  return out;
}


}  // namespace testoracle
