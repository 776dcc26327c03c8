#include "crispdec/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "crispdec/check.hpp"
#include "crispdec/ops.hpp"
#include "crispdec/wsss_loop.hpp"

namespace crispdec {

namespace {

std::mt19937_64 keyed_rng(uint64_t seed, uint64_t index, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32),
                    static_cast<uint32_t>(stream)};
  return std::mt19937_64(seq);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool bernoulli(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

// Base colour of a class: mid grey for background, evenly spaced hues
// around it for the foreground classes.
std::array<double, 3> class_color(int32_t label, int64_t num_classes) {
  if (label == 0) return {0.5, 0.5, 0.5};
  const double hue = static_cast<double>(label - 1) / static_cast<double>(num_classes - 1);
  std::array<double, 3> c{};
  for (int j = 0; j < 3; ++j)
    c[j] = 0.5 + 0.25 * std::cos(2.0 * std::numbers::pi * (hue - j / 3.0));
  return c;
}

PlacedShape random_shape(const SceneSpec& spec, std::mt19937_64& rng) {
  PlacedShape s{};
  if (bernoulli(rng, spec.thin_bar_prob)) {
    s.kind = ShapeKind::thin_bar;
    s.label = uniform_int(rng, 1, static_cast<int>(spec.num_classes - 1));
    s.size_a = uniform_int(rng, 8, 24);  // half length
    s.size_b = uniform_int(rng, 1, 3);   // width
    s.horizontal = bernoulli(rng, 0.5);
  } else {
    const int kinds = static_cast<int>(std::min<int64_t>(3, spec.num_classes - 1));
    const int pick = uniform_int(rng, 0, kinds - 1);
    s.kind = static_cast<ShapeKind>(pick);
    s.label = pick + 1;
    switch (s.kind) {
      case ShapeKind::disk:
        s.size_a = uniform_int(rng, 5, 12);
        break;
      case ShapeKind::rectangle:
        s.size_a = uniform_int(rng, 4, 12);
        s.size_b = uniform_int(rng, 4, 12);
        break;
      case ShapeKind::ring:
        s.size_a = uniform_int(rng, 9, 15);
        s.size_b = uniform_int(rng, 5, static_cast<int>(s.size_a) - 3);
        break;
      case ShapeKind::thin_bar:
        break;
    }
  }
  return s;
}

// Half extents of the shape's bounding box around its centre.
std::pair<int, int> half_extent(const PlacedShape& s) {
  switch (s.kind) {
    case ShapeKind::disk:
    case ShapeKind::ring:
      return {static_cast<int>(s.size_a), static_cast<int>(s.size_a)};
    case ShapeKind::rectangle:
      return {static_cast<int>(s.size_a), static_cast<int>(s.size_b)};
    case ShapeKind::thin_bar: {
      const int len = static_cast<int>(s.size_a), wid = static_cast<int>(s.size_b);
      return s.horizontal ? std::pair{wid, len} : std::pair{len, wid};
    }
  }
  return {0, 0};
}

// Pixels covered by the shape (fill = true also covers a ring's hole).
template <typename F>
void for_each_pixel(const PlacedShape& s, int64_t h, int64_t w, bool fill, F f) {
  const auto [ey, ex] = half_extent(s);
  const int64_t cy = static_cast<int64_t>(s.cy), cx = static_cast<int64_t>(s.cx);
  for (int64_t y = std::max<int64_t>(0, cy - ey); y <= std::min(h - 1, cy + ey); ++y)
    for (int64_t x = std::max<int64_t>(0, cx - ex); x <= std::min(w - 1, cx + ex); ++x) {
      const double dy = static_cast<double>(y - cy), dx = static_cast<double>(x - cx);
      const double d2 = dy * dy + dx * dx;
      bool inside = false;
      switch (s.kind) {
        case ShapeKind::disk:
          inside = d2 <= s.size_a * s.size_a;
          break;
        case ShapeKind::rectangle:
          inside = true;
          break;
        case ShapeKind::ring: {
          const double inner = s.size_a - s.size_b;
          inside = d2 <= s.size_a * s.size_a && (fill || d2 > inner * inner);
          break;
        }
        case ShapeKind::thin_bar:
          // The bar occupies [c, c + width - 1] across its long axis.
          inside = s.horizontal ? (y >= cy && y < cy + static_cast<int64_t>(s.size_b))
                                : (x >= cx && x < cx + static_cast<int64_t>(s.size_b));
          break;
      }
      if (inside) f(y, x);
    }
}

}  // namespace

void SceneSpec::validate() const {
  require(h > 0 && w > 0 && h % 32 == 0 && w % 32 == 0, "scene size must be a multiple of 32");
  require(num_classes >= 2 && num_classes <= 255, "scene classes must lie in [2, 255]");
  require(min_shapes >= 0 && max_shapes >= min_shapes, "bad shape count range");
  require(max_retries >= 1, "max_retries must be positive");
  require(noise_std >= 0 && color_jitter >= 0, "noise parameters must be non-negative");
  require(thin_bar_prob >= 0 && thin_bar_prob <= 1, "thin_bar_prob must lie in [0, 1]");
}

void rasterize_shape(const PlacedShape& shape, LabelMap& labels) {
  for_each_pixel(shape, labels.h, labels.w, false,
                 [&](int64_t y, int64_t x) { labels.at(y, x) = shape.label; });
}

Scene generate_scene(const SceneSpec& spec, int64_t index) {
  spec.validate();
  std::mt19937_64 rng = keyed_rng(spec.seed, static_cast<uint64_t>(index), 1);
  Scene scene;
  scene.gt = LabelMap(spec.h, spec.w, 0);
  Mask occupied(spec.h * spec.w, 0);
  const int count = uniform_int(rng, spec.min_shapes, spec.max_shapes);
  for (int s = 0; s < count; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      PlacedShape shape = random_shape(spec, rng);
      const auto [ey, ex] = half_extent(shape);
      // Keep a one-pixel margin to the canvas edge.
      const int64_t ylo = 1 + ey, yhi = spec.h - 2 - ey;
      const int64_t xlo = 1 + ex, xhi = spec.w - 2 - ex;
      if (ylo > yhi || xlo > xhi) continue;
      shape.cy = static_cast<double>(uniform_int(rng, static_cast<int>(ylo), static_cast<int>(yhi)));
      shape.cx = static_cast<double>(uniform_int(rng, static_cast<int>(xlo), static_cast<int>(xhi)));
      bool clash = false;
      for_each_pixel(shape, spec.h, spec.w, true, [&](int64_t y, int64_t x) {
        for (int64_t yy = std::max<int64_t>(0, y - 1); yy <= std::min(spec.h - 1, y + 1); ++yy)
          for (int64_t xx = std::max<int64_t>(0, x - 1); xx <= std::min(spec.w - 1, x + 1); ++xx)
            if (occupied[yy * spec.w + xx]) clash = true;
      });
      if (clash) continue;
      for_each_pixel(shape, spec.h, spec.w, true,
                     [&](int64_t y, int64_t x) { occupied[y * spec.w + x] = 1; });
      rasterize_shape(shape, scene.gt);
      scene.shapes.push_back(shape);
      placed = true;
    }
    if (!placed) ++scene.dropped_shapes;
  }

  // Per-object colour offsets, then per-pixel texture noise.
  const int64_t hw = spec.h * spec.w;
  LabelMap object_id(spec.h, spec.w, 0);
  for (size_t i = 0; i < scene.shapes.size(); ++i)
    for_each_pixel(scene.shapes[i], spec.h, spec.w, false,
                   [&](int64_t y, int64_t x) { object_id.at(y, x) = static_cast<int32_t>(i + 1); });
  std::vector<std::array<double, 3>> offsets(scene.shapes.size() + 1);
  for (auto& o : offsets)
    for (double& v : o) v = uniform(rng, -spec.color_jitter, spec.color_jitter);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::vector<double> pixels(3 * hw);
  for (int64_t i = 0; i < hw; ++i) {
    const auto base = class_color(scene.gt.data[i], spec.num_classes);
    const auto& off = offsets[object_id.data[i]];
    for (int c = 0; c < 3; ++c) pixels[c * hw + i] = base[c] + off[c];
  }
  for (double& v : pixels) v += noise(rng);
  scene.image = Tensor::from_data({3, spec.h, spec.w}, std::move(pixels));
  return scene;
}

void CorruptionSpec::validate() const {
  require(erode_px >= 0 && dilate_px >= 0 && blob_smooth_iters >= 0,
          "corruption sizes must be non-negative");
  for (double p : {drop_thin_prob, flip_prob, erode_prob})
    require(p >= 0 && p <= 1, "corruption probabilities must lie in [0, 1]");
  require(uncertainty_noise >= 0, "uncertainty noise must be non-negative");
}

int64_t label_components(const LabelMap& labels, std::vector<int32_t>& ids) {
  const int64_t h = labels.h, w = labels.w;
  ids.assign(h * w, 0);
  int32_t next = 0;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < h * w; ++start) {
    const int32_t v = labels.data[start];
    if (v == 0 || v == kIgnoreLabel || ids[start]) continue;
    ids[start] = ++next;
    stack.push_back(start);
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      const int64_t y = p / w, x = p % w;
      const int64_t nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int64_t qi = q[0] * w + q[1];
        if (ids[qi] || labels.data[qi] != v) continue;
        ids[qi] = next;
        stack.push_back(qi);
      }
    }
  }
  return next;
}

PseudoLabelSet corrupt_to_seed(const LabelMap& gt, int64_t num_classes,
                               const CorruptionSpec& spec, double q_percent,
                               std::mt19937_64& rng) {
  spec.validate();
  require(num_classes >= 2, "corrupt_to_seed: need at least two classes");
  const int64_t h = gt.h, w = gt.w, hw = h * w;
  LabelMap seed = gt;

  std::vector<int32_t> ids;
  const int64_t components = label_components(gt, ids);
  for (int32_t id = 1; id <= components; ++id) {
    Mask outside(hw, 1);
    int32_t label = 0;
    for (int64_t i = 0; i < hw; ++i)
      if (ids[i] == id) {
        outside[i] = 0;
        label = gt.data[i];
      }
    // Distance of every pixel to the nearest pixel outside the object.
    const std::vector<double> inner = euclidean_distance(outside, h, w);
    double thickness = 0;
    for (int64_t i = 0; i < hw; ++i)
      if (ids[i] == id) thickness = std::max(thickness, inner[i]);
    if (thickness <= 2.0 && bernoulli(rng, spec.drop_thin_prob)) {
      for (int64_t i = 0; i < hw; ++i)
        if (ids[i] == id) seed.data[i] = 0;
      continue;
    }
    if (bernoulli(rng, spec.erode_prob)) {
      for (int64_t i = 0; i < hw; ++i)
        if (ids[i] == id && inner[i] <= spec.erode_px) seed.data[i] = 0;
    } else if (spec.dilate_px > 0) {
      Mask inside(hw, 0);
      for (int64_t i = 0; i < hw; ++i) inside[i] = ids[i] == id;
      const std::vector<double> outer = euclidean_distance(inside, h, w);
      for (int64_t i = 0; i < hw; ++i)
        if (seed.data[i] == 0 && ids[i] == 0 && outer[i] <= spec.dilate_px) seed.data[i] = label;
    }
  }

  // Majority filter over 3x3 windows; ties keep the current label if it is
  // among the winners, otherwise the smallest winning label.
  std::vector<int> votes(num_classes);
  for (int it = 0; it < spec.blob_smooth_iters; ++it) {
    LabelMap next = seed;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        std::fill(votes.begin(), votes.end(), 0);
        for (int64_t yy = std::max<int64_t>(0, y - 1); yy <= std::min(h - 1, y + 1); ++yy)
          for (int64_t xx = std::max<int64_t>(0, x - 1); xx <= std::min(w - 1, x + 1); ++xx) {
            const int32_t v = seed.at(yy, xx);
            if (v >= 0 && v < num_classes) ++votes[v];
          }
        const int32_t cur = seed.at(y, x);
        const int best = *std::max_element(votes.begin(), votes.end());
        if (cur >= 0 && cur < num_classes && votes[cur] == best) continue;
        next.at(y, x) = static_cast<int32_t>(
            std::find(votes.begin(), votes.end(), best) - votes.begin());
      }
    seed = std::move(next);
  }

  for (int64_t i = 0; i < hw; ++i) {
    if (!bernoulli(rng, spec.flip_prob)) continue;
    int32_t other = uniform_int(rng, 0, static_cast<int>(num_classes - 2));
    if (other >= seed.data[i]) ++other;
    seed.data[i] = other;
  }

  PseudoLabelSet out;
  out.n = 1;
  out.h = h;
  out.w = w;
  out.labels = seed.data;
  const std::vector<double> dist = euclidean_distance(label_boundary(seed), h, w);
  std::vector<double> u(hw);
  for (int64_t i = 0; i < hw; ++i) u[i] = 1.0 / (1.0 + dist[i]);
  const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
  const double mn = *lo, range = *hi - *lo;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& v : u) {
    const double base = range > 0 ? (v - mn) / range : 0.0;
    const double jitter = spec.uncertainty_noise * noise(rng);
    v = std::clamp(base + jitter, 0.0, 1.0);
  }
  out.valid = build_ignore_mask(u, q_percent);
  out.seed_uncertainty = std::move(u);
  out.sync_mask();
  return out;
}

Dataset generate_dataset(const SceneSpec& spec, const CorruptionSpec& corruption, int64_t count,
                         int64_t first_index, double q_percent) {
  spec.validate();
  corruption.validate();
  require(count >= 0 && first_index >= 0, "dataset size and offset must be non-negative");
  Dataset data;
  data.h = spec.h;
  data.w = spec.w;
  data.num_classes = spec.num_classes;
  data.generator_seed = spec.seed;
  for (int64_t i = 0; i < count; ++i) {
    const int64_t index = first_index + i;
    Scene scene = generate_scene(spec, index);
    std::mt19937_64 rng = keyed_rng(spec.seed, static_cast<uint64_t>(index), 2);
    PseudoLabelSet seed = corrupt_to_seed(scene.gt, spec.num_classes, corruption, q_percent, rng);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%06lld", static_cast<long long>(index));
    data.names.emplace_back(name);
    data.images.push_back(scene.image);
    data.gt.push_back(scene.gt);
    data.seeds.push_back(seed.label_map(0));
    data.seed_uncertainty.push_back(std::move(seed.seed_uncertainty));
  }
  return data;
}

EncoderParams EncoderParams::init(const std::array<int64_t, 4>& channels, std::mt19937_64& rng,
                                  int64_t stem_channels, int64_t in_channels) {
  auto he = [](int64_t cin) { return std::sqrt(2.0 / (9.0 * static_cast<double>(cin))); };
  EncoderParams p;
  p.stem = ConvParams::make(stem_channels, in_channels, 3, he(in_channels), rng);
  int64_t cin = stem_channels;
  for (int i = 0; i < 4; ++i) {
    p.stages[i] = ConvParams::make(channels[i], cin, 3, he(cin), rng);
    cin = channels[i];
  }
  return p;
}

EncoderParams EncoderParams::zeros(const std::array<int64_t, 4>& channels, int64_t stem_channels,
                                   int64_t in_channels) {
  EncoderParams p;
  p.stem = ConvParams::zeros(stem_channels, in_channels, 3);
  int64_t cin = stem_channels;
  for (int i = 0; i < 4; ++i) {
    p.stages[i] = ConvParams::zeros(channels[i], cin, 3);
    cin = channels[i];
  }
  return p;
}

EncoderParams EncoderParams::clone() const {
  auto c = [](const ConvParams& p) { return ConvParams{p.weight.clone(), p.bias.clone()}; };
  EncoderParams p;
  p.stem = c(stem);
  for (int i = 0; i < 4; ++i) p.stages[i] = c(stages[i]);
  return p;
}

void EncoderParams::append_to(ParamList& out) const {
  stem.append_to(out, "encoder.stem", "encoder");
  for (int i = 0; i < 4; ++i)
    stages[i].append_to(out, "encoder.stage" + std::to_string(i + 1), "encoder");
}

FeaturePyramid toy_encoder_forward(const Tensor& images, const EncoderParams& params) {
  require_shape(images.defined() && images.rank() == 4, "encoder: expected N x C x H x W images");
  const int64_t h = images.dim(2), w = images.dim(3);
  require_shape(h > 0 && w > 0 && h % 32 == 0 && w % 32 == 0,
                "encoder: image size must be a positive multiple of 32, got " +
                    shape_to_string(images.shape()));
  Conv2dOptions s2;
  s2.stride = 2;
  FeaturePyramid pyr;
  pyr.input_h = h;
  pyr.input_w = w;
  Tensor x = relu(conv2d(images, params.stem.weight, params.stem.bias, s2));
  for (int i = 0; i < 4; ++i) {
    x = relu(conv2d(x, params.stages[i].weight, params.stages[i].bias, s2));
    pyr.levels[i] = x;
  }
  return pyr;
}

}  // namespace crispdec
