#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "crispdec/dataset.hpp"
#include "crispdec/decoder.hpp"
#include "crispdec/label_map.hpp"
#include "crispdec/losses.hpp"
#include "crispdec/params.hpp"

namespace crispdec {

enum class ShapeKind { disk, rectangle, ring, thin_bar };

struct SceneSpec {
  int64_t h = 64, w = 64;
  int64_t num_classes = 4;  // background + disk, rectangle, ring classes
  int min_shapes = 2, max_shapes = 5;
  uint64_t seed = 0;
  int max_retries = 40;
  double noise_std = 0.1;     // per-pixel texture noise
  double color_jitter = 0.05;  // per-object colour offset
  double thin_bar_prob = 0.3;  // chance that a shape is a thin bar

  void validate() const;
};

struct PlacedShape {
  ShapeKind kind;
  int32_t label;
  double cy, cx;
  double size_a, size_b;  // radius / half extents / outer radius and thickness / length and width
  bool horizontal = true;
};

struct Scene {
  Tensor image;  // [3,H,W] in roughly [0,1]
  LabelMap gt;
  std::vector<PlacedShape> shapes;
  int dropped_shapes = 0;  // shapes that found no free spot
};

/// Deterministic per (spec.seed, index). Shapes never overlap and stay
/// inside the canvas. Disk -> class 1, rectangle -> 2, ring -> 3, thin bars
/// take a random foreground class.
Scene generate_scene(const SceneSpec& spec, int64_t index);

/// Rasterises a single shape into `labels`; exposed for the area oracles.
void rasterize_shape(const PlacedShape& shape, LabelMap& labels);

struct CorruptionSpec {
  int erode_px = 2;
  int dilate_px = 2;
  int blob_smooth_iters = 2;
  double drop_thin_prob = 0.5;
  double flip_prob = 0.02;
  double erode_prob = 0.5;  // chance an object is eroded rather than dilated
  double uncertainty_noise = 0.05;

  void validate() const;
  bool is_identity() const {
    return erode_px == 0 && dilate_px == 0 && blob_smooth_iters == 0 && drop_thin_prob == 0 &&
           flip_prob == 0;
  }
};

/// 4-connected components of equal non-background labels; ids start at 1,
/// 0 marks background. Returns the number of components.
int64_t label_components(const LabelMap& labels, std::vector<int32_t>& component_ids);

/// Simulated seed: drops thin objects (inner distance <= 2 px, i.e. width
/// <= 3) with drop_thin_prob, erodes or dilates every other object (chosen
/// at random per object), applies majority smoothing and random label flips.
/// seed_uncertainty is the min-max normalised inverse distance to the seed's
/// label boundary plus noise, clamped to [0,1]; the valid mask hides the
/// top q_percent of it.
PseudoLabelSet corrupt_to_seed(const LabelMap& gt, int64_t num_classes,
                               const CorruptionSpec& spec, double q_percent,
                               std::mt19937_64& rng);

/// Generates `count` scenes with indices first_index .. first_index+count-1
/// and their corrupted seeds.
Dataset generate_dataset(const SceneSpec& spec, const CorruptionSpec& corruption, int64_t count,
                         int64_t first_index = 0, double q_percent = 30.0);

/// Small convolutional backbone: a stride-2 stem followed by four stride-2
/// stages, so the stage outputs sit at strides 4, 8, 16 and 32.
struct EncoderParams {
  ConvParams stem;
  std::array<ConvParams, 4> stages;

  static EncoderParams init(const std::array<int64_t, 4>& channels, std::mt19937_64& rng,
                            int64_t stem_channels = 8, int64_t in_channels = 3);
  static EncoderParams zeros(const std::array<int64_t, 4>& channels, int64_t stem_channels = 8,
                             int64_t in_channels = 3);
  EncoderParams clone() const;
  void append_to(ParamList& out) const;
};

/// images [N,3,H,W] with H, W multiples of 32.
FeaturePyramid toy_encoder_forward(const Tensor& images, const EncoderParams& params);

}  // namespace crispdec
