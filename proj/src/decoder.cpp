#include "crispdec/decoder.hpp"

#include <cmath>

#include "crispdec/check.hpp"
#include "crispdec/ops.hpp"

namespace crispdec {

void FeaturePyramid::validate() const {
  require_shape(input_h > 0 && input_w > 0 && input_h % 32 == 0 && input_w % 32 == 0,
                "pyramid: input size must be a positive multiple of 32");
  for (int i = 0; i < 4; ++i) {
    const Tensor& t = levels[i];
    require_shape(t.defined() && t.rank() == 4, "pyramid: level " + std::to_string(i + 1) +
                                                    " must be N x C x H x W");
    const int64_t stride = int64_t{4} << i;
    require_shape(t.dim(0) == levels[0].dim(0), "pyramid: levels disagree on batch size");
    require_shape(t.dim(2) == input_h / stride && t.dim(3) == input_w / stride,
                  "pyramid: level " + std::to_string(i + 1) + " is " +
                      shape_to_string(t.shape()) + ", expected stride " +
                      std::to_string(stride));
  }
}

void DecoderConfig::validate() const {
  require(width > 0 && num_classes >= 2 && edge_hidden > 0, "decoder: bad dimensions");
  require(modulation_alpha >= 0, "decoder: modulation alpha must be >= 0");
  require(variance_eps > 0, "decoder: variance eps must be > 0");
  require(!use_ugr || use_variance, "the refiner needs the variance head (gate input U_ale)");
  require(!use_udmf || use_dmf, "uncertainty modulation needs dynamic fusion");
  require(!use_udmf || use_ugr, "uncertainty modulation needs the uncertainty-guided refiner");
}

namespace {

ProjectionParams make_projection(int64_t out, int64_t in, std::mt19937_64& rng) {
  return {ConvParams::make(out, in, 1, std::sqrt(2.0 / static_cast<double>(in)), rng),
          Tensor::full({out}, 1.0, true), Tensor::zeros({out}, true)};
}

ProjectionParams clone_projection(const ProjectionParams& p) {
  auto c = [](const Tensor& t) { return t.defined() ? t.clone() : Tensor(); };
  return {{c(p.conv.weight), c(p.conv.bias)}, c(p.gamma), c(p.beta)};
}

ConvParams clone_conv(const ConvParams& p) {
  auto c = [](const Tensor& t) { return t.defined() ? t.clone() : Tensor(); };
  return {c(p.weight), c(p.bias)};
}

Tensor apply_conv(const Tensor& x, const ConvParams& p) { return conv2d(x, p.weight, p.bias); }

Tensor project(const Tensor& x, const ProjectionParams& p, bool use_norm) {
  Tensor y = apply_conv(x, p.conv);
  if (use_norm) y = layer_norm_channels(y, p.gamma, p.beta);
  return relu(y);
}

}  // namespace

DecoderParams DecoderParams::init(const DecoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int64_t e = cfg.width, k = cfg.num_classes;
  DecoderParams p;
  for (int i = 0; i < 4; ++i) {
    p.projection[i] = make_projection(e, cfg.in_channels[i], rng);
    p.score[i] = ConvParams::zeros(1, e, 1);
  }
  p.concat_fuse = make_projection(e, 4 * e, rng);
  const double head_std = std::sqrt(1.0 / static_cast<double>(e));
  p.seg_head = ConvParams::make(k, e, 1, head_std, rng);
  p.variance_head = ConvParams::make(k, e, 1, head_std, rng);
  p.edge_conv = ConvParams::make(cfg.edge_hidden, e, 3, std::sqrt(2.0 / (9.0 * e)), rng);
  p.edge_out = ConvParams::make(1, cfg.edge_hidden, 1,
                                std::sqrt(1.0 / static_cast<double>(cfg.edge_hidden)), rng);
  const int64_t rin = e + k + 1;
  p.refine_conv = ConvParams::make(e, rin, 3, std::sqrt(2.0 / (9.0 * rin)), rng);
  p.refine_out = ConvParams::zeros(k, e, 1);
  p.gate = ConvParams::make(1, e + 1, 1, 0.01, rng);
  p.gate.bias.mutable_data()[0] = cfg.gate_bias_init;
  return p;
}

DecoderParams DecoderParams::clone() const {
  DecoderParams p;
  for (int i = 0; i < 4; ++i) {
    p.projection[i] = clone_projection(projection[i]);
    p.score[i] = clone_conv(score[i]);
  }
  p.concat_fuse = clone_projection(concat_fuse);
  p.seg_head = clone_conv(seg_head);
  p.variance_head = clone_conv(variance_head);
  p.edge_conv = clone_conv(edge_conv);
  p.edge_out = clone_conv(edge_out);
  p.refine_conv = clone_conv(refine_conv);
  p.refine_out = clone_conv(refine_out);
  p.gate = clone_conv(gate);
  return p;
}

ParamList DecoderParams::named(const DecoderConfig& cfg) const {
  ParamList out;
  for (int i = 0; i < 4; ++i) {
    const std::string pre = "decoder.proj" + std::to_string(i + 1);
    projection[i].conv.append_to(out, pre, "decoder.projection");
    if (cfg.use_norm) {
      out.push_back({pre + ".gamma", projection[i].gamma, "decoder.projection"});
      out.push_back({pre + ".beta", projection[i].beta, "decoder.projection"});
    }
  }
  if (cfg.use_dmf) {
    for (int i = 0; i < 4; ++i)
      score[i].append_to(out, "decoder.score" + std::to_string(i + 1), "decoder.dmf");
  } else {
    concat_fuse.conv.append_to(out, "decoder.concat_fuse", "decoder.fuse");
    if (cfg.use_norm) {
      out.push_back({"decoder.concat_fuse.gamma", concat_fuse.gamma, "decoder.fuse"});
      out.push_back({"decoder.concat_fuse.beta", concat_fuse.beta, "decoder.fuse"});
    }
  }
  seg_head.append_to(out, "decoder.seg_head", "decoder.seg");
  if (cfg.use_variance) variance_head.append_to(out, "decoder.variance_head", "decoder.variance");
  if (cfg.use_ugr) {
    refine_conv.append_to(out, "decoder.refine_conv", "decoder.ugr");
    refine_out.append_to(out, "decoder.refine_out", "decoder.ugr");
    gate.append_to(out, "decoder.gate", "decoder.ugr");
  }
  if (cfg.use_boundary) {
    edge_conv.append_to(out, "decoder.edge_conv", "decoder.boundary");
    edge_out.append_to(out, "decoder.edge_out", "decoder.boundary");
  }
  return out;
}

std::array<Tensor, 4> project_and_upsample(const FeaturePyramid& pyramid,
                                           const DecoderParams& params,
                                           const DecoderConfig& cfg) {
  pyramid.validate();
  const int64_t h = pyramid.input_h / 4, w = pyramid.input_w / 4;
  std::array<Tensor, 4> out;
  for (int i = 0; i < 4; ++i) {
    require_shape(pyramid.levels[i].dim(1) == cfg.in_channels[i],
                  "pyramid level " + std::to_string(i + 1) + " has " +
                      std::to_string(pyramid.levels[i].dim(1)) + " channels, expected " +
                      std::to_string(cfg.in_channels[i]));
    Tensor e = project(pyramid.levels[i], params.projection[i], cfg.use_norm);
    out[i] = i == 0 ? e : bilinear_upsample(e, h, w);
  }
  return out;
}

FusionResult fuse_with_scores(const std::array<Tensor, 4>& projected, const Tensor& scores) {
  const Tensor& e1 = projected[0];
  require_shape(scores.rank() == 4 && scores.dim(0) == e1.dim(0) && scores.dim(1) == 4 &&
                    scores.dim(2) == e1.dim(2) && scores.dim(3) == e1.dim(3),
                "fusion scores must be N x 4 x h x w on the projected grid");
  for (const auto& e : projected)
    require_shape(e.shape() == e1.shape(), "projected maps must share one shape");
  FusionResult r;
  r.scores = scores;
  r.weights = softmax(scores, 1);
  Tensor f;
  for (int i = 0; i < 4; ++i) {
    Tensor term = scale_by_map(projected[i], slice_channels(r.weights, i, 1));
    f = i == 0 ? term : add(f, term);
  }
  r.fused = f;
  return r;
}

FusionResult dmf_fuse(const std::array<Tensor, 4>& projected, const DecoderParams& params,
                      const DecoderConfig& cfg, const std::optional<Tensor>& u_down) {
  const Tensor& e1 = projected[0];
  if (u_down) {
    require_shape(u_down->rank() == 4 && u_down->dim(0) == e1.dim(0) && u_down->dim(1) == 1 &&
                      u_down->dim(2) == e1.dim(2) && u_down->dim(3) == e1.dim(3),
                  "U_down must be N x 1 x h x w on the fused grid, got " +
                      shape_to_string(u_down->shape()));
  }
  std::vector<Tensor> scores;
  for (int i = 0; i < 4; ++i) {
    Tensor s = apply_conv(projected[i], params.score[i]);
    if (u_down) {
      if (cfg.modulation == ModulationVariant::uniform_shift) {
        s = sub(s, mul_scalar(*u_down, cfg.modulation_alpha));
      } else {
        const double k = -cfg.modulation_alpha * cfg.reliability[i];
        s = mul(s, add_scalar(mul_scalar(*u_down, k), 1.0));
      }
    }
    scores.push_back(s);
  }
  return fuse_with_scores(projected, concat_channels(scores));
}

FusionResult concat_fuse(const std::array<Tensor, 4>& projected, const DecoderParams& params,
                         const DecoderConfig& cfg) {
  FusionResult r;
  r.fused = project(concat_channels({projected.begin(), projected.end()}), params.concat_fuse,
                    cfg.use_norm);
  return r;
}

VarianceResult variance_branch(const Tensor& fused, const DecoderParams& params,
                               const DecoderConfig& cfg) {
  VarianceResult r;
  r.sigma2 = add_scalar(softplus(apply_conv(fused, params.variance_head)), cfg.variance_eps);
  r.u_ale = channel_mean(r.sigma2);
  return r;
}

RefineResult ugr_refine(const Tensor& fused, const Tensor& logits, const Tensor& u_ale,
                        const DecoderParams& params, bool detach_probs) {
  require_shape(logits.dim(0) == fused.dim(0) && logits.dim(2) == fused.dim(2) &&
                    logits.dim(3) == fused.dim(3) && u_ale.shape() == Shape{fused.dim(0), 1,
                                                                            fused.dim(2),
                                                                            fused.dim(3)},
                "ugr_refine: F, Z and U_ale must share the decoder grid");
  Tensor probs = softmax(detach_probs ? logits.detach() : logits, 1);
  Tensor hidden = relu(apply_conv(concat_channels({fused, probs, u_ale}), params.refine_conv));
  RefineResult r;
  r.delta = apply_conv(hidden, params.refine_out);
  r.gate = sigmoid(apply_conv(concat_channels({fused, u_ale}), params.gate));
  r.zstar = add(logits, scale_by_map(r.delta, r.gate));
  return r;
}

Tensor boundary_branch(const Tensor& tap, const DecoderParams& params) {
  return apply_conv(relu(apply_conv(tap, params.edge_conv)), params.edge_out);
}

DecoderOutputs decoder_forward(const FeaturePyramid& pyramid, const DecoderParams& params,
                               const DecoderConfig& cfg, DecoderMode mode,
                               ForwardOptions options) {
  cfg.validate();
  DecoderOutputs out;
  out.projected = project_and_upsample(pyramid, params, cfg);

  FusionResult fusion;
  if (!cfg.use_dmf) {
    fusion = concat_fuse(out.projected, params, cfg);
  } else if (mode == DecoderMode::uncertainty_modulated && cfg.use_udmf) {
    // Pass 1 supplies U_ale for the score modulation of pass 2.
    FusionResult first = dmf_fuse(out.projected, params, cfg);
    VarianceResult first_var = variance_branch(first.fused, params, cfg);
    fusion = dmf_fuse(out.projected, params, cfg, first_var.u_ale);
  } else {
    fusion = dmf_fuse(out.projected, params, cfg);
  }
  out.fused = fusion.fused;
  out.fusion_weights = fusion.weights;

  out.z = apply_conv(out.fused, params.seg_head);
  out.zstar = out.z;
  if (cfg.use_variance) {
    VarianceResult v = variance_branch(out.fused, params, cfg);
    out.sigma2 = v.sigma2;
    out.u_ale = v.u_ale;
  }
  if (cfg.use_ugr) {
    RefineResult r = ugr_refine(out.fused, out.z, out.u_ale, params, options.detach_probs);
    out.zstar = r.zstar;
    out.gate = r.gate;
    out.delta = r.delta;
  }
  if (cfg.use_boundary) {
    const Tensor& tap = cfg.edge_tap == EdgeTap::projected_c1 ? out.projected[0] : out.fused;
    out.edge_logits = boundary_branch(tap, params);
  }
  return out;
}

}  // namespace crispdec
