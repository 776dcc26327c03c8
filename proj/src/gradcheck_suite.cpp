#include <random>

#include "crispdec/check.hpp"
#include "crispdec/decoder.hpp"
#include "crispdec/gradcheck.hpp"
#include "crispdec/losses.hpp"
#include "crispdec/ops.hpp"
#include "crispdec/synthdata.hpp"

namespace crispdec {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// sum(t * r) for a fixed random r, so every output coordinate matters.
Tensor probe(const Tensor& t, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, -1.0, 1.0, false)));
}

GradCheckOptions options(int64_t max_coords = 0) {
  GradCheckOptions o;
  o.step = 1e-5;
  o.max_coords = max_coords;
  return o;
}

std::vector<std::string> names_of(size_t n) {
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.push_back("input" + std::to_string(i));
  return out;
}

// Gradient check of probe(op(inputs)) against every input.
GradCheckSuite::Check op_check(std::function<Tensor(const std::vector<Tensor>&)> op,
                               std::vector<Shape> shapes, uint64_t seed, double lo = -1.0,
                               double hi = 1.0) {
  return [op, shapes, seed, lo, hi] {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> inputs;
    for (const auto& s : shapes) inputs.push_back(random_tensor(s, rng, lo, hi));
    return check_gradients([&] { return probe(op(inputs), seed + 1); }, inputs,
                           names_of(inputs.size()), options());
  };
}

DecoderConfig micro_config() {
  DecoderConfig cfg;
  cfg.width = 8;
  cfg.num_classes = 3;
  cfg.edge_hidden = 4;
  cfg.in_channels = {4, 6, 8, 10};
  return cfg;
}

FeaturePyramid micro_pyramid(const DecoderConfig& cfg, std::mt19937_64& rng, int64_t n = 2,
                             int64_t size = 32) {
  FeaturePyramid p;
  p.input_h = p.input_w = size;
  for (int i = 0; i < 4; ++i) {
    const int64_t s = size >> (i + 2);
    p.levels[i] = random_tensor({n, cfg.in_channels[i], s, s}, rng, -1.0, 1.0);
  }
  return p;
}

// Decoder parameters with every tensor randomised (zero-initialised parts
// would otherwise hide gradients) and the gate bias near zero.
DecoderParams random_params(const DecoderConfig& cfg, std::mt19937_64& rng) {
  DecoderParams p = DecoderParams::init(cfg, rng);
  std::normal_distribution<double> noise(0.0, 0.3);
  ParamList all = p.named(cfg);
  DecoderConfig other = cfg;
  other.use_dmf = !cfg.use_dmf;
  other.use_udmf = false;
  ParamList rest = p.named(other);
  all.insert(all.end(), rest.begin(), rest.end());
  for (auto& np : all)
    for (double& v : np.tensor.mutable_data()) v += noise(rng);
  return p;
}

std::vector<Tensor> tensors_of(const ParamList& list) {
  std::vector<Tensor> out;
  for (const auto& p : list) out.push_back(p.tensor);
  return out;
}

std::vector<std::string> names_of(const ParamList& list) {
  std::vector<std::string> out;
  for (const auto& p : list) out.push_back(p.name);
  return out;
}

PseudoLabelSet random_labels(int64_t n, int64_t h, int64_t w, int64_t k, std::mt19937_64& rng) {
  PseudoLabelSet s;
  s.n = n;
  s.h = h;
  s.w = w;
  std::uniform_int_distribution<int> cls(0, static_cast<int>(k - 1));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int64_t i = 0; i < n * h * w; ++i) {
    const bool ignore = u(rng) < 0.1;
    s.labels.push_back(ignore ? kIgnoreLabel : cls(rng));
    s.valid.push_back(!ignore && u(rng) < 0.8);
    s.seed_uncertainty.push_back(u(rng));
  }
  return s;
}

// Labels made of blocks, so boundaries and distances are non-trivial.
PseudoLabelSet blocky_labels(int64_t n, int64_t h, int64_t w, int64_t k, std::mt19937_64& rng) {
  PseudoLabelSet s = random_labels(n, h, w, k, rng);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(k - 1));
  for (int64_t b = 0; b < n; ++b) {
    const int c0 = cls(rng), c1 = (c0 + 1) % static_cast<int>(k);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t i = (b * h + y) * w + x;
        s.labels[i] = (x + y < (h + w) / 2) ? c0 : c1;
        s.valid[i] = 1;
      }
  }
  return s;
}

}  // namespace

GradCheckSuite builtin_gradcheck_suite() {
  GradCheckSuite suite;
  const Shape map{2, 3, 4, 5};

  // Primitives.
  suite.add("add", op_check([](const auto& x) { return add(x[0], x[1]); }, {map, map}, 11));
  suite.add("sub", op_check([](const auto& x) { return sub(x[0], x[1]); }, {map, map}, 12));
  suite.add("mul", op_check([](const auto& x) { return mul(x[0], x[1]); }, {map, map}, 13));
  suite.add("add_scalar", op_check([](const auto& x) { return add_scalar(x[0], 0.7); }, {map}, 14));
  suite.add("mul_scalar", op_check([](const auto& x) { return mul_scalar(x[0], -1.3); }, {map}, 15));
  suite.add("neg", op_check([](const auto& x) { return neg(x[0]); }, {map}, 16));
  suite.add("exp", op_check([](const auto& x) { return exp(x[0]); }, {map}, 17));
  suite.add("log", op_check([](const auto& x) { return log(x[0]); }, {map}, 18, 0.2, 2.0));
  suite.add("softplus", op_check([](const auto& x) { return softplus(x[0]); }, {map}, 19, -4, 4));
  suite.add("sigmoid", op_check([](const auto& x) { return sigmoid(x[0]); }, {map}, 20, -4, 4));
  suite.add("relu", op_check([](const auto& x) { return relu(x[0]); }, {map}, 21));
  suite.add("sum", op_check([](const auto& x) { return mul_scalar(sum(x[0]), 1.0); }, {map}, 22));
  suite.add("mean", op_check([](const auto& x) { return mean(x[0]); }, {map}, 23));
  suite.add("softmax", op_check([](const auto& x) { return softmax(x[0], 1); }, {map}, 24, -3, 3));
  suite.add("log_softmax",
            op_check([](const auto& x) { return log_softmax(x[0], 1); }, {map}, 25, -3, 3));
  suite.add("bilinear_upsample",
            op_check([](const auto& x) { return bilinear_upsample(x[0], 7, 11); }, {{2, 2, 3, 4}},
                     26));
  suite.add("conv2d_1x1",
            op_check([](const auto& x) { return conv2d(x[0], x[1], x[2]); },
                     {{2, 3, 5, 4}, {4, 3, 1, 1}, {4}}, 27));
  suite.add("conv2d_3x3",
            op_check([](const auto& x) { return conv2d(x[0], x[1], x[2]); },
                     {{2, 3, 5, 4}, {2, 3, 3, 3}, {2}}, 28));
  suite.add("conv2d_3x3_stride2", op_check(
                                       [](const auto& x) {
                                         Conv2dOptions o;
                                         o.stride = 2;
                                         return conv2d(x[0], x[1], x[2], o);
                                       },
                                       {{2, 2, 6, 5}, {3, 2, 3, 3}, {3}}, 29));
  suite.add("concat_channels",
            op_check([](const auto& x) { return concat_channels({x[0], x[1]}); },
                     {{2, 2, 3, 3}, {2, 3, 3, 3}}, 30));
  suite.add("slice_channels",
            op_check([](const auto& x) { return slice_channels(x[0], 1, 2); }, {map}, 31));
  suite.add("scale_by_map", op_check([](const auto& x) { return scale_by_map(x[0], x[1]); },
                                     {map, {2, 1, 4, 5}}, 32));
  suite.add("channel_mean", op_check([](const auto& x) { return channel_mean(x[0]); }, {map}, 33));
  suite.add("layer_norm_channels",
            op_check([](const auto& x) { return layer_norm_channels(x[0], x[1], x[2]); },
                     {{2, 4, 3, 3}, {4}, {4}}, 34));

  // Decoder stages on a micro configuration (E=8, K=3, 32x32 input).
  suite.add("decoder.project_and_upsample", [] {
    std::mt19937_64 rng(41);
    DecoderConfig cfg = micro_config();
    DecoderParams p = random_params(cfg, rng);
    FeaturePyramid pyr = micro_pyramid(cfg, rng);
    ParamList list;
    for (int i = 0; i < 4; ++i) {
      p.projection[i].conv.append_to(list, "proj" + std::to_string(i + 1), "decoder");
      list.push_back({"proj" + std::to_string(i + 1) + ".gamma", p.projection[i].gamma, ""});
      list.push_back({"level" + std::to_string(i + 1), pyr.levels[i], ""});
    }
    auto loss = [&] {
      auto e = project_and_upsample(pyr, p, cfg);
      return add(add(probe(e[0], 1), probe(e[1], 2)), add(probe(e[2], 3), probe(e[3], 4)));
    };
    return check_gradients(loss, tensors_of(list), names_of(list), options(40));
  });
  for (int variant = 0; variant < 3; ++variant) {
    const char* name = variant == 0   ? "decoder.dmf_fuse"
                       : variant == 1 ? "decoder.dmf_fuse_uniform_shift"
                                      : "decoder.dmf_fuse_reliability_scaled";
    suite.add(name, [variant] {
      std::mt19937_64 rng(42 + variant);
      DecoderConfig cfg = micro_config();
      cfg.modulation = variant == 2 ? ModulationVariant::reliability_scaled
                                    : ModulationVariant::uniform_shift;
      DecoderParams p = random_params(cfg, rng);
      std::array<Tensor, 4> e;
      for (auto& t : e) t = random_tensor({2, cfg.width, 4, 4}, rng);
      Tensor u = random_tensor({2, 1, 4, 4}, rng, 0.0, 1.5);
      ParamList list;
      for (int i = 0; i < 4; ++i) {
        p.score[i].append_to(list, "score" + std::to_string(i + 1), "");
        list.push_back({"E" + std::to_string(i + 1), e[i], ""});
      }
      if (variant > 0) list.push_back({"u_down", u, ""});
      auto loss = [&] {
        FusionResult r = variant == 0 ? dmf_fuse(e, p, cfg) : dmf_fuse(e, p, cfg, u);
        // The scores term keeps the U_down gradient non-trivial: under a
        // uniform shift the weights themselves do not depend on it.
        return add(add(probe(r.fused, 5), probe(r.weights, 6)), probe(r.scores, 16));
      };
      return check_gradients(loss, tensors_of(list), names_of(list), options(40));
    });
  }
  suite.add("decoder.concat_fuse", [] {
    std::mt19937_64 rng(45);
    DecoderConfig cfg = micro_config();
    cfg.use_dmf = cfg.use_udmf = false;
    DecoderParams p = random_params(cfg, rng);
    std::array<Tensor, 4> e;
    for (auto& t : e) t = random_tensor({2, cfg.width, 4, 4}, rng);
    ParamList list;
    p.concat_fuse.conv.append_to(list, "concat_fuse", "");
    list.push_back({"concat_fuse.gamma", p.concat_fuse.gamma, ""});
    list.push_back({"concat_fuse.beta", p.concat_fuse.beta, ""});
    list.push_back({"E1", e[0], ""});
    auto loss = [&] { return probe(concat_fuse(e, p, cfg).fused, 7); };
    return check_gradients(loss, tensors_of(list), names_of(list), options(40));
  });
  suite.add("decoder.variance_branch", [] {
    std::mt19937_64 rng(46);
    DecoderConfig cfg = micro_config();
    DecoderParams p = random_params(cfg, rng);
    Tensor f = random_tensor({2, cfg.width, 4, 4}, rng);
    ParamList list;
    p.variance_head.append_to(list, "variance_head", "");
    list.push_back({"F", f, ""});
    auto loss = [&] {
      VarianceResult v = variance_branch(f, p, cfg);
      return add(probe(v.sigma2, 8), probe(v.u_ale, 9));
    };
    return check_gradients(loss, tensors_of(list), names_of(list), options(40));
  });
  for (int detach = 0; detach < 2; ++detach) {
    suite.add(detach ? "decoder.ugr_refine_detached" : "decoder.ugr_refine", [detach] {
      std::mt19937_64 rng(47 + detach);
      DecoderConfig cfg = micro_config();
      DecoderParams p = random_params(cfg, rng);
      Tensor f = random_tensor({2, cfg.width, 4, 4}, rng);
      Tensor z = random_tensor({2, cfg.num_classes, 4, 4}, rng, -2, 2);
      Tensor u = random_tensor({2, 1, 4, 4}, rng, 0.1, 1.0);
      ParamList list;
      p.refine_conv.append_to(list, "refine_conv", "");
      p.refine_out.append_to(list, "refine_out", "");
      p.gate.append_to(list, "gate", "");
      list.push_back({"F", f, ""});
      list.push_back({"Z", z, ""});
      list.push_back({"U", u, ""});
      auto loss = [&] {
        RefineResult r = ugr_refine(f, z, u, p, detach != 0);
        return add(probe(r.zstar, 10), probe(r.gate, 11));
      };
      if (!detach) return check_gradients(loss, tensors_of(list), names_of(list), options(40));
      // P depends on Z alone, so every other input is checked as usual. For
      // Z the reference holds P fixed at its current value: with the probs
      // detached, that is the whole function the analytic gradient sees.
      list.pop_back();
      list.pop_back();
      list.push_back({"U", u, ""});
      auto results = check_gradients(loss, tensors_of(list), names_of(list), options(40));
      const Tensor frozen = softmax(z.detach(), 1).clone();
      auto fixed_p = [&] {
        Tensor hidden = relu(conv2d(concat_channels({f, frozen, u}), p.refine_conv.weight,
                                    p.refine_conv.bias));
        Tensor delta = conv2d(hidden, p.refine_out.weight, p.refine_out.bias);
        Tensor gate = sigmoid(conv2d(concat_channels({f, u}), p.gate.weight, p.gate.bias));
        return add(probe(add(z, scale_by_map(delta, gate)), 10), probe(gate, 11)).item();
      };
      z.zero_grad();
      loss().backward();
      const std::vector<double> analytic = z.grad();
      const std::vector<double> numeric = finite_diff_grad_inplace(fixed_p, z, 1e-5);
      GradCheckResult r;
      r.name = "Z (probabilities held fixed)";
      for (size_t j = 0; j < analytic.size(); ++j) {
        const double e = relative_error(analytic[j], numeric[j]);
        if (r.worst_index < 0 || e > r.max_rel_error) {
          r.max_rel_error = e;
          r.worst_index = static_cast<int64_t>(j);
          r.worst_analytic = analytic[j];
          r.worst_numeric = numeric[j];
        }
      }
      r.checked = static_cast<int64_t>(analytic.size());
      results.push_back(r);
      return results;
    });
  }
  suite.add("decoder.boundary_branch", [] {
    std::mt19937_64 rng(49);
    DecoderConfig cfg = micro_config();
    DecoderParams p = random_params(cfg, rng);
    Tensor tap = random_tensor({2, cfg.width, 4, 4}, rng);
    ParamList list;
    p.edge_conv.append_to(list, "edge_conv", "");
    p.edge_out.append_to(list, "edge_out", "");
    list.push_back({"tap", tap, ""});
    auto loss = [&] { return probe(boundary_branch(tap, p), 12); };
    return check_gradients(loss, tensors_of(list), names_of(list), options(40));
  });
  for (int mode = 0; mode < 2; ++mode) {
    suite.add(mode ? "decoder.forward_uncertainty_modulated" : "decoder.forward_plain", [mode] {
      std::mt19937_64 rng(50 + mode);
      DecoderConfig cfg = micro_config();
      cfg.modulation = ModulationVariant::reliability_scaled;
      DecoderParams p = random_params(cfg, rng);
      FeaturePyramid pyr = micro_pyramid(cfg, rng);
      ParamList list = p.named(cfg);
      for (int i = 0; i < 4; ++i) list.push_back({"C" + std::to_string(i + 1), pyr.levels[i], ""});
      auto loss = [&] {
        DecoderOutputs o = decoder_forward(
            pyr, p, cfg, mode ? DecoderMode::uncertainty_modulated : DecoderMode::plain);
        return add(add(probe(o.zstar, 13), probe(o.u_ale, 14)), probe(o.edge_logits, 15));
      };
      return check_gradients(loss, tensors_of(list), names_of(list), options(12));
    });
  }

  // Loss terms.
  suite.add("loss.masked_ce", [] {
    std::mt19937_64 rng(60);
    PseudoLabelSet labels = random_labels(2, 5, 6, 3, rng);
    Tensor z = random_tensor({2, 3, 5, 6}, rng, -3, 3);
    Tensor wmap = random_tensor({2, 1, 5, 6}, rng, 0.1, 1.0, false);
    return check_gradients([&] { return masked_ce(z, labels, wmap); }, {z}, {"logits"}, options());
  });
  suite.add("loss.masked_dice", [] {
    std::mt19937_64 rng(61);
    PseudoLabelSet labels = random_labels(2, 5, 6, 3, rng);
    Tensor z = random_tensor({2, 3, 5, 6}, rng, -3, 3);
    Tensor wmap = random_tensor({2, 1, 5, 6}, rng, 0.1, 1.0, false);
    return check_gradients([&] { return masked_dice(z, labels, wmap); }, {z}, {"logits"},
                           options());
  });
  suite.add("loss.heteroscedastic", [] {
    std::mt19937_64 rng(62);
    PseudoLabelSet labels = random_labels(2, 5, 6, 3, rng);
    Tensor z = random_tensor({2, 3, 5, 6}, rng, -3, 3);
    Tensor s2 = random_tensor({2, 1, 5, 6}, rng, 0.2, 2.0);
    return check_gradients([&] { return heteroscedastic_loss(z, labels, s2); }, {z, s2},
                           {"logits", "sigma2"}, options());
  });
  for (int weighted = 0; weighted < 2; ++weighted) {
    suite.add(weighted ? "loss.boundary_weighted" : "loss.boundary", [weighted] {
      std::mt19937_64 rng(63 + weighted);
      PseudoLabelSet labels = blocky_labels(2, 6, 6, 3, rng);
      Mask band = boundary_band(labels, 2);
      Tensor e = random_tensor({2, 1, 6, 6}, rng, -3, 3);
      Tensor wmap;
      if (weighted) wmap = random_tensor({2, 1, 6, 6}, rng, 0.1, 1.0, false);
      return check_gradients([&] { return boundary_loss(e, band, 1.0, wmap); }, {e},
                             {"edge_logits"}, options());
    });
  }
  suite.add("loss.sdf", [] {
    std::mt19937_64 rng(65);
    PseudoLabelSet labels = blocky_labels(2, 6, 7, 3, rng);
    Tensor z = random_tensor({2, 3, 6, 7}, rng, -3, 3);
    return check_gradients([&] { return sdf_loss(softmax(z, 1), labels); }, {z}, {"logits"},
                           options());
  });
  suite.add("loss.total", [] {
    std::mt19937_64 rng(66);
    DecoderConfig cfg = micro_config();
    DecoderParams p = random_params(cfg, rng);
    FeaturePyramid pyr = micro_pyramid(cfg, rng);
    PseudoLabelSet labels = blocky_labels(2, 32, 32, cfg.num_classes, rng);
    ParamList list = p.named(cfg);
    // w is a constant of the graph by design; with it on, finite differences
    // would also see its dependence on the parameters.
    LossWeights weights;
    weights.uncertainty_weighting = false;
    auto loss = [&] {
      DecoderOutputs o = decoder_forward(pyr, p, cfg, DecoderMode::uncertainty_modulated);
      return total_loss(o, labels, weights).total;
    };
    return check_gradients(loss, tensors_of(list), names_of(list), options(8));
  });

  // Encoder, alone and composed with the decoder.
  suite.add("encoder.forward", [] {
    std::mt19937_64 rng(70);
    std::array<int64_t, 4> ch{4, 6, 8, 10};
    EncoderParams enc = EncoderParams::init(ch, rng, 4);
    Tensor img = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    ParamList list;
    enc.append_to(list);
    list.push_back({"image", img, ""});
    auto loss = [&] {
      FeaturePyramid pyr = toy_encoder_forward(img, enc);
      return add(add(probe(pyr.levels[0], 1), probe(pyr.levels[1], 2)),
                 add(probe(pyr.levels[2], 3), probe(pyr.levels[3], 4)));
    };
    return check_gradients(loss, tensors_of(list), names_of(list), options(30));
  });
  suite.add("encoder_decoder.total", [] {
    std::mt19937_64 rng(71);
    DecoderConfig cfg = micro_config();
    EncoderParams enc = EncoderParams::init(cfg.in_channels, rng, 4);
    DecoderParams p = random_params(cfg, rng);
    Tensor img = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0, false);
    PseudoLabelSet labels = blocky_labels(1, 32, 32, cfg.num_classes, rng);
    ParamList list;
    enc.append_to(list);
    LossWeights weights;
    weights.uncertainty_weighting = false;
    auto loss = [&] {
      DecoderOutputs o = decoder_forward(toy_encoder_forward(img, enc), p, cfg,
                                         DecoderMode::uncertainty_modulated);
      return total_loss(o, labels, weights).total;
    };
    return check_gradients(loss, tensors_of(list), names_of(list), options(12));
  });
  return suite;
}

}  // namespace crispdec
