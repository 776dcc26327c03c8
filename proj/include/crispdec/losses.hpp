#pragma once

#include <cstdint>
#include <vector>

#include "crispdec/decoder.hpp"
#include "crispdec/label_map.hpp"
#include "crispdec/tensor.hpp"

namespace crispdec {

/// Batched pseudo labels: hard labels (kIgnoreLabel allowed), the valid mask
/// M and the seed uncertainty used for top-q% filtering, all N x H x W.
struct PseudoLabelSet {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> labels;
  std::vector<uint8_t> valid;
  std::vector<double> seed_uncertainty;

  /// Valid wherever the label is not IGNORE; zero uncertainty.
  static PseudoLabelSet from_label_maps(const std::vector<LabelMap>& maps);
  static PseudoLabelSet stack(const std::vector<PseudoLabelSet>& parts);

  PseudoLabelSet image(int64_t index) const;
  LabelMap label_map(int64_t index) const;
  int64_t pixels() const { return h * w; }
  bool counts(int64_t i) const { return valid[i] && labels[i] != kIgnoreLabel; }

  /// Checks sizes, M in {0,1}, M == 0 on IGNORE, and labels in [0, K).
  void validate(int64_t num_classes) const;
  /// Zeroes M wherever the label is IGNORE.
  void sync_mask();
};

struct LossWeights {
  double lambda_dice = 1.0;
  double lambda_het = 0.5;
  double lambda_bnd = 0.5;
  double lambda_sdf = 0.1;
  double alpha = 0.5;  // aleatoric vs entropy mix
  double beta = 2.0;   // w = exp(-beta U)
  double dice_smooth = 1.0;
  int band_width = 2;
  bool uncertainty_weighting = true;
  bool boundary_uncertainty_weighting = false;  // scale boundary BCE by w

  void validate() const;
};

/// Per-image maps at label resolution, N x 1 x H x W, outside the graph.
struct UncertaintyMaps {
  Tensor u_ale_norm;  // min-max normalised upsampled U_ale (zeros if absent)
  Tensor u_ent_norm;  // min-max normalised entropy of softmax(Z*)
  Tensor u;           // alpha * u_ale_norm + (1 - alpha) * u_ent_norm
  Tensor weight;      // exp(-beta * u)
};

struct MaskStats {
  int64_t valid = 0;
  int64_t total = 0;
  bool empty() const { return valid == 0; }
};

/// Mean over valid pixels of w * (-log softmax(logits)[label]). Logits are
/// N x K x H x W at label resolution; `weight` (N x 1 x H x W) is a constant,
/// pass an undefined tensor for w = 1. No valid pixel gives 0 and
/// stats->empty().
Tensor masked_ce(const Tensor& logits, const PseudoLabelSet& labels, const Tensor& weight,
                 MaskStats* stats = nullptr);

/// Soft Dice 1 - (2 sum w p y + s) / (sum w (p + y) + s) per image and per
/// class present among its valid labels, averaged over classes then images.
Tensor masked_dice(const Tensor& logits, const PseudoLabelSet& labels, const Tensor& weight,
                   double smooth = 1.0);

/// `u_ale` is the decoder-grid aleatoric map (undefined: entropy only);
/// `zstar_up` the refined logits at label resolution.
UncertaintyMaps mix_uncertainty(const Tensor& u_ale, const Tensor& zstar_up, double alpha,
                                double beta);

/// Mean over valid pixels of CE / (2 sigma2) + 0.5 log sigma2, with
/// sigma2_up N x 1 x H x W strictly positive.
Tensor heteroscedastic_loss(const Tensor& z_up, const PseudoLabelSet& labels,
                            const Tensor& sigma2_up);

/// Class-agnostic band: pixels within Chebyshev distance < width of a label
/// interface, per image. N x H x W.
Mask boundary_band(const PseudoLabelSet& labels, int width = 2);

/// Pixel-mean BCE(edge_logits, band) plus per-image soft Dice of
/// sigmoid(edge_logits) against the band. `bce_weight` optionally scales
/// the BCE per pixel.
Tensor boundary_loss(const Tensor& edge_logits_up, const Mask& band, double smooth = 1.0,
                     const Tensor& bce_weight = {});

/// Distance to the label-interface set; negative on label 1 for binary maps,
/// unsigned otherwise. All kNoSiteDistance when there is no interface.
std::vector<double> signed_distance(const LabelMap& labels);

/// (1/HW) sum ||grad P*||_1 |phi(labels)| with forward differences, averaged
/// over the batch. Images without an interface contribute 0.
Tensor sdf_loss(const Tensor& pstar_up, const PseudoLabelSet& labels);

struct LossBreakdown {
  Tensor total;
  double ce = 0, dice = 0, het = 0, bnd = 0, sdf = 0;
  double mean_w = 1.0;
  double valid_fraction = 0;
  bool empty_valid = false;
  UncertaintyMaps maps;
};

/// L = CE + l_dice Dice (on Z*, weighted by w) + l_het L_het (on Z)
///   + l_bnd L_bnd + l_sdf L_sdf.
/// Terms follow the outputs that exist: L_het and aleatoric weighting need
/// u_ale, the boundary and surface terms need edge_logits. Without u_ale,
/// w = 1.
LossBreakdown total_loss(const DecoderOutputs& outputs, const PseudoLabelSet& labels,
                         const LossWeights& weights);

}  // namespace crispdec
