#pragma once

#include <array>
#include <optional>
#include <random>

#include "crispdec/params.hpp"
#include "crispdec/tensor.hpp"

namespace crispdec {

/// Encoder maps C1..C4 at strides 4, 8, 16 and 32 of an H x W input.
struct FeaturePyramid {
  std::array<Tensor, 4> levels;
  int64_t input_h = 0;
  int64_t input_w = 0;

  /// Throws ShapeError unless the four levels share N and sit exactly at
  /// strides 4/8/16/32 of the input size.
  void validate() const;
  int64_t batch() const { return levels[0].dim(0); }
};

enum class EdgeTap { fused, projected_c1 };

/// How U_down enters the fusion scores when modulation is on.
enum class ModulationVariant {
  uniform_shift,      // s_i <- s_i - alpha * U_down (softmax cancels it per location)
  reliability_scaled  // s_i <- s_i * (1 - alpha * U_down * r_i); opt-in extension
};

enum class DecoderMode { plain, uncertainty_modulated };

struct DecoderConfig {
  int64_t width = 32;  // common projection width E
  int64_t num_classes = 4;
  std::array<int64_t, 4> in_channels{8, 16, 24, 32};
  int64_t edge_hidden = 16;
  double variance_eps = 1e-6;
  double modulation_alpha = 1.0;  // alpha of the score modulation, >= 0
  ModulationVariant modulation = ModulationVariant::uniform_shift;
  std::array<double, 4> reliability{0.25, 0.5, 0.75, 1.0};
  double gate_bias_init = -2.1972;  // sigmoid(-2.1972) ~= 0.1
  EdgeTap edge_tap = EdgeTap::projected_c1;
  bool use_norm = true;

  // Component switches (the ablation axes).
  bool use_dmf = true;       // false: static concat + 1x1 fuse
  bool use_variance = true;  // variance head, aleatoric U, heteroscedastic loss
  bool use_ugr = true;       // gated residual refiner
  bool use_boundary = true;  // edge head, band + surface losses
  bool use_udmf = true;      // second fusion pass modulated by U_ale

  /// Rejects inconsistent switch combinations with a readable message.
  void validate() const;
};

struct ProjectionParams {
  ConvParams conv;
  Tensor gamma, beta;  // layer-norm affine, [E]
};

struct DecoderParams {
  std::array<ProjectionParams, 4> projection;
  std::array<ConvParams, 4> score;  // DMF 1x1 score convs, E -> 1
  ProjectionParams concat_fuse;      // static baseline, 4E -> E
  ConvParams seg_head;               // E -> K
  ConvParams variance_head;          // E -> K
  ConvParams edge_conv, edge_out;    // 3x3 E -> hidden, 1x1 hidden -> 1
  ConvParams refine_conv, refine_out;  // 3x3 (E+K+1) -> E, 1x1 E -> K
  ConvParams gate;                   // 1x1 (E+1) -> 1

  /// Deterministic initialisation for a seed. Score convs and the refiner's
  /// last layer start at zero; the gate bias starts at cfg.gate_bias_init.
  static DecoderParams init(const DecoderConfig& cfg, std::mt19937_64& rng);
  DecoderParams clone() const;
  /// Tensors that the configuration actually uses, in a fixed order.
  ParamList named(const DecoderConfig& cfg) const;
};

struct FusionResult {
  Tensor fused;    // F, [N,E,h,w]
  Tensor weights;  // w, [N,4,h,w]; undefined for the concat baseline
  Tensor scores;   // s after modulation, [N,4,h,w]
};

struct VarianceResult {
  Tensor sigma2;  // [N,K,h,w], >= eps
  Tensor u_ale;   // [N,1,h,w], channel mean of sigma2
};

struct RefineResult {
  Tensor zstar;  // Z + G * Delta
  Tensor gate;   // G in (0,1), [N,1,h,w]
  Tensor delta;  // [N,K,h,w]
};

struct DecoderOutputs {
  Tensor z, zstar, fusion_weights, fused, sigma2, u_ale, gate, delta, edge_logits;
  std::array<Tensor, 4> projected;  // E_1..E_4
};

/// conv1x1 -> layer norm -> relu per level, then bilinear resize to the C1
/// grid. E_1 is already on that grid and is not resampled.
std::array<Tensor, 4> project_and_upsample(const FeaturePyramid& pyramid,
                                           const DecoderParams& params,
                                           const DecoderConfig& cfg);

/// Softmax over the four per-scale scores at every location, then the
/// weighted sum of the projected maps. `u_down` (N x 1 x h x w) enables
/// score modulation.
FusionResult dmf_fuse(const std::array<Tensor, 4>& projected, const DecoderParams& params,
                      const DecoderConfig& cfg, const std::optional<Tensor>& u_down = {});

/// Fusion with externally supplied scores [N,4,h,w].
FusionResult fuse_with_scores(const std::array<Tensor, 4>& projected, const Tensor& scores);

/// Static baseline: relu(norm(conv1x1(cat(E_1..E_4)))).
FusionResult concat_fuse(const std::array<Tensor, 4>& projected, const DecoderParams& params,
                         const DecoderConfig& cfg);

VarianceResult variance_branch(const Tensor& fused, const DecoderParams& params,
                               const DecoderConfig& cfg);

/// Delta = phi(cat(F, P, U)), G = sigmoid(psi(cat(F, U))), Z* = Z + G * Delta
/// with P = softmax(Z). `detach_probs` cuts the gradient through P.
RefineResult ugr_refine(const Tensor& fused, const Tensor& logits, const Tensor& u_ale,
                        const DecoderParams& params, bool detach_probs = false);

/// Edge logits [N,1,h,w] from the tapped stream (F or E_1).
Tensor boundary_branch(const Tensor& tap, const DecoderParams& params);

struct ForwardOptions {
  bool detach_probs = false;
};

/// Full head. In uncertainty_modulated mode a first fuse + variance pass
/// yields U_ale, which then modulates the scores of a second fuse; all heads
/// run on the re-fused feature.
DecoderOutputs decoder_forward(const FeaturePyramid& pyramid, const DecoderParams& params,
                               const DecoderConfig& cfg, DecoderMode mode,
                               ForwardOptions options = {});

}  // namespace crispdec
