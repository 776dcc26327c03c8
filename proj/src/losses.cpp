#include "crispdec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crispdec/check.hpp"
#include "crispdec/ops.hpp"

namespace crispdec {

using detail::Node;

namespace {

double* input_grad(Node& self, size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

void require_logits_match(const Tensor& logits, const PseudoLabelSet& labels, const char* op) {
  require_shape(logits.defined() && logits.rank() == 4, std::string(op) + ": expected N x K x H x W logits");
  require_shape(logits.dim(0) == labels.n && logits.dim(2) == labels.h && logits.dim(3) == labels.w,
                std::string(op) + ": logits " + shape_to_string(logits.shape()) +
                    " do not match labels " + std::to_string(labels.n) + "x" +
                    std::to_string(labels.h) + "x" + std::to_string(labels.w));
  labels.validate(logits.dim(1));
}

void require_weight_match(const Tensor& weight, const PseudoLabelSet& labels, const char* op) {
  if (!weight.defined()) return;
  require_shape(weight.shape() == Shape{labels.n, 1, labels.h, labels.w},
                std::string(op) + ": weight map must be N x 1 x H x W");
}

// Per-pixel softmax over the class axis, laid out like the logits.
std::vector<double> softmax_values(const Tensor& logits) {
  const int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  auto z = logits.data();
  std::vector<double> p(z.size());
  for (int64_t b = 0; b < n; ++b) {
    const int64_t base = b * k * hw;
    for (int64_t i = 0; i < hw; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < k; ++c) mx = std::max(mx, z[base + c * hw + i]);
      double total = 0;
      for (int64_t c = 0; c < k; ++c) {
        const double e = std::exp(z[base + c * hw + i] - mx);
        p[base + c * hw + i] = e;
        total += e;
      }
      for (int64_t c = 0; c < k; ++c) p[base + c * hw + i] /= total;
    }
  }
  return p;
}

// -log softmax(z)[label] at one pixel.
double pixel_ce(std::span<const double> z, int64_t base, int64_t hw, int64_t k, int64_t i,
                int32_t label) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int64_t c = 0; c < k; ++c) mx = std::max(mx, z[base + c * hw + i]);
  double total = 0;
  for (int64_t c = 0; c < k; ++c) total += std::exp(z[base + c * hw + i] - mx);
  return mx + std::log(total) - z[base + label * hw + i];
}

double bce_with_logits(double x, double target) {
  return std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void min_max_normalize(std::span<double> values) {
  if (values.empty()) return;
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (double& v : values) v = (v - mn) / (mx - mn);
}

}  // namespace

PseudoLabelSet PseudoLabelSet::from_label_maps(const std::vector<LabelMap>& maps) {
  PseudoLabelSet out;
  out.n = static_cast<int64_t>(maps.size());
  if (maps.empty()) return out;
  out.h = maps[0].h;
  out.w = maps[0].w;
  for (const LabelMap& m : maps) {
    require_shape(m.h == out.h && m.w == out.w, "label maps differ in size");
    out.labels.insert(out.labels.end(), m.data.begin(), m.data.end());
  }
  out.valid.resize(out.labels.size());
  for (size_t i = 0; i < out.labels.size(); ++i) out.valid[i] = out.labels[i] != kIgnoreLabel;
  out.seed_uncertainty.assign(out.labels.size(), 0.0);
  return out;
}

PseudoLabelSet PseudoLabelSet::stack(const std::vector<PseudoLabelSet>& parts) {
  PseudoLabelSet out;
  if (parts.empty()) return out;
  out.h = parts[0].h;
  out.w = parts[0].w;
  for (const PseudoLabelSet& p : parts) {
    require_shape(p.h == out.h && p.w == out.w, "pseudo label sets differ in size");
    out.n += p.n;
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.valid.insert(out.valid.end(), p.valid.begin(), p.valid.end());
    out.seed_uncertainty.insert(out.seed_uncertainty.end(), p.seed_uncertainty.begin(),
                                p.seed_uncertainty.end());
  }
  return out;
}

PseudoLabelSet PseudoLabelSet::image(int64_t index) const {
  require_shape(index >= 0 && index < n, "pseudo label index out of range");
  PseudoLabelSet out;
  out.n = 1;
  out.h = h;
  out.w = w;
  const int64_t hw = h * w, off = index * hw;
  out.labels.assign(labels.begin() + off, labels.begin() + off + hw);
  out.valid.assign(valid.begin() + off, valid.begin() + off + hw);
  out.seed_uncertainty.assign(seed_uncertainty.begin() + off, seed_uncertainty.begin() + off + hw);
  return out;
}

LabelMap PseudoLabelSet::label_map(int64_t index) const {
  require_shape(index >= 0 && index < n, "pseudo label index out of range");
  LabelMap out(h, w);
  std::copy_n(labels.begin() + index * h * w, h * w, out.data.begin());
  return out;
}

void PseudoLabelSet::validate(int64_t num_classes) const {
  const size_t total = static_cast<size_t>(n * h * w);
  require_shape(labels.size() == total && valid.size() == total &&
                    seed_uncertainty.size() == total,
                "pseudo label set: array sizes do not match N x H x W");
  for (size_t i = 0; i < total; ++i) {
    const int32_t y = labels[i];
    require(valid[i] <= 1, "pseudo label set: mask values must be 0 or 1");
    if (y == kIgnoreLabel) {
      require(valid[i] == 0, "pseudo label set: mask set on an IGNORE pixel");
      continue;
    }
    require(y >= 0 && y < num_classes,
            "pseudo label set: label " + std::to_string(y) + " outside [0, " +
                std::to_string(num_classes) + ")");
  }
}

void PseudoLabelSet::sync_mask() {
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == kIgnoreLabel) valid[i] = 0;
}

void LossWeights::validate() const {
  require(lambda_dice >= 0 && lambda_het >= 0 && lambda_bnd >= 0 && lambda_sdf >= 0,
          "loss coefficients must be non-negative");
  require(alpha >= 0 && alpha <= 1, "alpha must lie in [0, 1]");
  require(beta >= 0, "beta must be non-negative");
  require(dice_smooth >= 0, "dice smoothing must be non-negative");
  require(band_width >= 1, "band width must be at least 1");
}

Tensor masked_ce(const Tensor& logits, const PseudoLabelSet& labels, const Tensor& weight,
                 MaskStats* stats) {
  require_logits_match(logits, labels, "masked_ce");
  require_weight_match(weight, labels, "masked_ce");
  const int64_t n = labels.n, k = logits.dim(1), hw = labels.pixels();
  auto z = logits.data();
  std::span<const double> wv;
  if (weight.defined()) wv = weight.data();

  int64_t count = 0;
  double total = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t idx = b * hw + i;
      if (!labels.counts(idx)) continue;
      ++count;
      const double wi = wv.empty() ? 1.0 : wv[idx];
      total += wi * pixel_ce(z, b * k * hw, hw, k, i, labels.labels[idx]);
    }
  if (stats) {
    stats->valid = count;
    stats->total = n * hw;
  }
  if (count == 0) return Tensor::scalar(0.0);

  const double inv = 1.0 / static_cast<double>(count);
  auto label_copy = std::make_shared<PseudoLabelSet>(labels);
  std::vector<double> wcopy(wv.begin(), wv.end());
  return make_op_result(
      "masked_ce", {}, {total * inv}, {logits}, [label_copy, wcopy, inv, n, k, hw](Node& self) {
        double* gz = input_grad(self, 0);
        if (!gz) return;
        const double g = self.grad[0] * inv;
        const auto& zv = self.inputs[0]->value;
        std::vector<double> p(k);
        for (int64_t b = 0; b < n; ++b)
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = b * hw + i;
            if (!label_copy->counts(idx)) continue;
            const int64_t base = b * k * hw;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t c = 0; c < k; ++c) mx = std::max(mx, zv[base + c * hw + i]);
            double s = 0;
            for (int64_t c = 0; c < k; ++c) s += p[c] = std::exp(zv[base + c * hw + i] - mx);
            const double wi = wcopy.empty() ? 1.0 : wcopy[idx];
            const int32_t y = label_copy->labels[idx];
            for (int64_t c = 0; c < k; ++c)
              gz[base + c * hw + i] += g * wi * (p[c] / s - (c == y ? 1.0 : 0.0));
          }
      });
}

Tensor masked_dice(const Tensor& logits, const PseudoLabelSet& labels, const Tensor& weight,
                   double smooth) {
  require_logits_match(logits, labels, "masked_dice");
  require_weight_match(weight, labels, "masked_dice");
  const int64_t n = labels.n, k = logits.dim(1), hw = labels.pixels();
  std::vector<double> p = softmax_values(logits);
  std::vector<double> wv;
  if (weight.defined()) wv.assign(weight.data().begin(), weight.data().end());
  auto wat = [&](int64_t idx) { return wv.empty() ? 1.0 : wv[idx]; };

  // Per image and class: intersection, denominator, present flag.
  std::vector<double> inter(n * k, 0.0), denom(n * k, 0.0);
  std::vector<uint8_t> present(n * k, 0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t idx = b * hw + i;
      if (!labels.counts(idx)) continue;
      const int32_t y = labels.labels[idx];
      present[b * k + y] = 1;
      const double wi = wat(idx);
      for (int64_t c = 0; c < k; ++c) {
        const double pc = p[b * k * hw + c * hw + i];
        const double yc = c == y ? 1.0 : 0.0;
        inter[b * k + c] += wi * pc * yc;
        denom[b * k + c] += wi * (pc + yc);
      }
    }
  // Per-(image, class) factor in the final mean.
  std::vector<double> coef(n * k, 0.0);
  int64_t images = 0;
  for (int64_t b = 0; b < n; ++b) {
    int64_t classes = 0;
    for (int64_t c = 0; c < k; ++c) classes += present[b * k + c];
    if (classes > 0) ++images;
  }
  double loss = 0;
  if (images == 0) return Tensor::scalar(0.0);
  for (int64_t b = 0; b < n; ++b) {
    int64_t classes = 0;
    for (int64_t c = 0; c < k; ++c) classes += present[b * k + c];
    if (classes == 0) continue;
    for (int64_t c = 0; c < k; ++c) {
      if (!present[b * k + c]) continue;
      coef[b * k + c] = 1.0 / static_cast<double>(classes * images);
      const double d = denom[b * k + c] + smooth;
      loss += coef[b * k + c] * (1.0 - (2.0 * inter[b * k + c] + smooth) / d);
    }
  }

  auto label_copy = std::make_shared<PseudoLabelSet>(labels);
  return make_op_result(
      "masked_dice", {}, {loss}, {logits},
      [label_copy, p = std::move(p), wv = std::move(wv), inter = std::move(inter),
       denom = std::move(denom), coef = std::move(coef), smooth, n, k, hw](Node& self) {
        double* gz = input_grad(self, 0);
        if (!gz) return;
        const double g = self.grad[0];
        std::vector<double> gp(k);
        for (int64_t b = 0; b < n; ++b)
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = b * hw + i;
            if (!label_copy->counts(idx)) continue;
            const int32_t y = label_copy->labels[idx];
            const double wi = wv.empty() ? 1.0 : wv[idx];
            const int64_t base = b * k * hw;
            double dot = 0;
            for (int64_t c = 0; c < k; ++c) {
              const double cf = coef[b * k + c];
              gp[c] = 0;
              if (cf != 0) {
                const double d = denom[b * k + c] + smooth;
                const double num = 2.0 * inter[b * k + c] + smooth;
                const double yc = c == y ? 1.0 : 0.0;
                gp[c] = -cf * wi * (2.0 * yc * d - num) / (d * d);
              }
              dot += gp[c] * p[base + c * hw + i];
            }
            for (int64_t c = 0; c < k; ++c) {
              const double pc = p[base + c * hw + i];
              gz[base + c * hw + i] += g * pc * (gp[c] - dot);
            }
          }
      });
}

UncertaintyMaps mix_uncertainty(const Tensor& u_ale, const Tensor& zstar_up, double alpha,
                                double beta) {
  require_shape(zstar_up.defined() && zstar_up.rank() == 4, "mix_uncertainty: bad logits");
  const int64_t n = zstar_up.dim(0), k = zstar_up.dim(1), h = zstar_up.dim(2),
                w = zstar_up.dim(3), hw = h * w;
  NoGradGuard no_grad;
  UncertaintyMaps out;

  out.u_ale_norm = Tensor::zeros({n, 1, h, w});
  if (u_ale.defined()) {
    require_shape(u_ale.rank() == 4 && u_ale.dim(0) == n && u_ale.dim(1) == 1,
                  "mix_uncertainty: U_ale must be N x 1 x h x w");
    Tensor up = bilinear_upsample(u_ale.detach(), h, w);
    auto src = up.data();
    auto dst = out.u_ale_norm.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    for (int64_t b = 0; b < n; ++b) min_max_normalize(dst.subspan(b * hw, hw));
  }

  out.u_ent_norm = Tensor::zeros({n, 1, h, w});
  {
    std::vector<double> p = softmax_values(zstar_up);
    auto dst = out.u_ent_norm.mutable_data();
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t i = 0; i < hw; ++i) {
        double ent = 0;
        for (int64_t c = 0; c < k; ++c) {
          const double pc = p[b * k * hw + c * hw + i];
          if (pc > 0) ent -= pc * std::log(pc);
        }
        dst[b * hw + i] = ent;
      }
      min_max_normalize(dst.subspan(b * hw, hw));
    }
  }

  out.u = Tensor::zeros({n, 1, h, w});
  out.weight = Tensor::zeros({n, 1, h, w});
  auto ua = out.u_ale_norm.data();
  auto ue = out.u_ent_norm.data();
  auto u = out.u.mutable_data();
  auto wt = out.weight.mutable_data();
  for (int64_t i = 0; i < n * hw; ++i) {
    u[i] = u_ale.defined() ? alpha * ua[i] + (1.0 - alpha) * ue[i] : ue[i];
    wt[i] = std::exp(-beta * u[i]);
  }
  return out;
}

Tensor heteroscedastic_loss(const Tensor& z_up, const PseudoLabelSet& labels,
                            const Tensor& sigma2_up) {
  require_logits_match(z_up, labels, "heteroscedastic_loss");
  require_shape(sigma2_up.defined() && sigma2_up.shape() == Shape{labels.n, 1, labels.h, labels.w},
                "heteroscedastic_loss: sigma2 must be N x 1 x H x W");
  const int64_t n = labels.n, k = z_up.dim(1), hw = labels.pixels();
  auto z = z_up.data();
  auto s2 = sigma2_up.data();
  for (double v : s2)
    if (!(v > 0)) throw DomainError("heteroscedastic_loss: sigma2 must be positive");

  int64_t count = 0;
  double total = 0;
  std::vector<double> ce(n * hw, 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t idx = b * hw + i;
      if (!labels.counts(idx)) continue;
      ++count;
      ce[idx] = pixel_ce(z, b * k * hw, hw, k, i, labels.labels[idx]);
      total += ce[idx] / (2.0 * s2[idx]) + 0.5 * std::log(s2[idx]);
    }
  if (count == 0) return Tensor::scalar(0.0);
  const double inv = 1.0 / static_cast<double>(count);
  auto label_copy = std::make_shared<PseudoLabelSet>(labels);
  return make_op_result(
      "heteroscedastic_loss", {}, {total * inv}, {z_up, sigma2_up},
      [label_copy, ce = std::move(ce), inv, n, k, hw](Node& self) {
        double* gz = input_grad(self, 0);
        double* gs = input_grad(self, 1);
        if (!gz && !gs) return;
        const double g = self.grad[0] * inv;
        const auto& zv = self.inputs[0]->value;
        const auto& s2v = self.inputs[1]->value;
        std::vector<double> p(k);
        for (int64_t b = 0; b < n; ++b)
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = b * hw + i;
            if (!label_copy->counts(idx)) continue;
            const double s2i = s2v[idx];
            if (gs) gs[idx] += g * (0.5 / s2i - ce[idx] / (2.0 * s2i * s2i));
            if (!gz) continue;
            const int64_t base = b * k * hw;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t c = 0; c < k; ++c) mx = std::max(mx, zv[base + c * hw + i]);
            double s = 0;
            for (int64_t c = 0; c < k; ++c) s += p[c] = std::exp(zv[base + c * hw + i] - mx);
            const int32_t y = label_copy->labels[idx];
            for (int64_t c = 0; c < k; ++c)
              gz[base + c * hw + i] += g / (2.0 * s2i) * (p[c] / s - (c == y ? 1.0 : 0.0));
          }
      });
}

Mask boundary_band(const PseudoLabelSet& labels, int width) {
  const int64_t hw = labels.pixels();
  Mask out(labels.n * hw, 0);
  for (int64_t b = 0; b < labels.n; ++b) {
    Mask band = chebyshev_band(label_boundary(labels.label_map(b)), labels.h, labels.w, width);
    std::copy(band.begin(), band.end(), out.begin() + b * hw);
  }
  return out;
}

Tensor boundary_loss(const Tensor& edge_logits_up, const Mask& band, double smooth,
                     const Tensor& bce_weight) {
  require_shape(edge_logits_up.defined() && edge_logits_up.rank() == 4 &&
                    edge_logits_up.dim(1) == 1,
                "boundary_loss: edge logits must be N x 1 x H x W");
  const int64_t n = edge_logits_up.dim(0), hw = edge_logits_up.dim(2) * edge_logits_up.dim(3);
  require_shape(static_cast<int64_t>(band.size()) == n * hw,
                "boundary_loss: band does not match the edge map");
  if (bce_weight.defined())
    require_shape(bce_weight.shape() == edge_logits_up.shape(),
                  "boundary_loss: weight must match the edge map");
  auto x = edge_logits_up.data();
  std::vector<double> wv;
  if (bce_weight.defined()) wv.assign(bce_weight.data().begin(), bce_weight.data().end());

  const double inv_pixels = 1.0 / static_cast<double>(n * hw);
  double bce = 0;
  std::vector<double> sig(n * hw);
  std::vector<double> inter(n, 0.0), denom(n, 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t idx = b * hw + i;
      const double t = band[idx] ? 1.0 : 0.0;
      bce += (wv.empty() ? 1.0 : wv[idx]) * bce_with_logits(x[idx], t);
      sig[idx] = stable_sigmoid(x[idx]);
      inter[b] += sig[idx] * t;
      denom[b] += sig[idx] + t;
    }
  double dice = 0;
  for (int64_t b = 0; b < n; ++b)
    dice += 1.0 - (2.0 * inter[b] + smooth) / (denom[b] + smooth);
  dice /= static_cast<double>(n);

  auto band_copy = std::make_shared<Mask>(band);
  return make_op_result(
      "boundary_loss", {}, {bce * inv_pixels + dice}, {edge_logits_up},
      [band_copy, sig = std::move(sig), wv = std::move(wv), inter = std::move(inter),
       denom = std::move(denom), smooth, inv_pixels, n, hw](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        const double g = self.grad[0];
        const double inv_n = 1.0 / static_cast<double>(n);
        for (int64_t b = 0; b < n; ++b) {
          const double d = denom[b] + smooth;
          const double num = 2.0 * inter[b] + smooth;
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = b * hw + i;
            const double t = (*band_copy)[idx] ? 1.0 : 0.0;
            const double s = sig[idx];
            const double wi = wv.empty() ? 1.0 : wv[idx];
            const double d_bce = wi * (s - t) * inv_pixels;
            const double d_sig = -inv_n * (2.0 * t * d - num) / (d * d);
            gx[idx] += g * (d_bce + d_sig * s * (1.0 - s));
          }
        }
      });
}

std::vector<double> signed_distance(const LabelMap& labels) {
  Mask boundary = label_boundary(labels);
  std::vector<double> phi = euclidean_distance(boundary, labels.h, labels.w);
  bool binary = true;
  for (int32_t v : labels.data)
    if (v != 0 && v != 1 && v != kIgnoreLabel) binary = false;
  if (!binary) return phi;
  for (size_t i = 0; i < phi.size(); ++i)
    if (labels.data[i] == 1 && phi[i] < kNoSiteDistance) phi[i] = -phi[i];
  return phi;
}

Tensor sdf_loss(const Tensor& pstar_up, const PseudoLabelSet& labels) {
  require_shape(pstar_up.defined() && pstar_up.rank() == 4 && pstar_up.dim(0) == labels.n &&
                    pstar_up.dim(2) == labels.h && pstar_up.dim(3) == labels.w,
                "sdf_loss: probabilities do not match the labels");
  const int64_t n = labels.n, k = pstar_up.dim(1), h = labels.h, w = labels.w, hw = h * w;
  // |phi| per pixel; zero for images without an interface so they add nothing.
  std::vector<double> dist(n * hw, 0.0);
  for (int64_t b = 0; b < n; ++b) {
    std::vector<double> phi = signed_distance(labels.label_map(b));
    if (std::abs(phi[0]) >= kNoSiteDistance) continue;
    for (int64_t i = 0; i < hw; ++i) dist[b * hw + i] = std::abs(phi[i]);
  }
  auto p = pstar_up.data();
  const double scale = 1.0 / static_cast<double>(hw * n);
  double total = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t c = 0; c < k; ++c) {
      const double* pc = p.data() + (b * k + c) * hw;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const double d = dist[b * hw + y * w + x];
          if (d == 0) continue;
          double g = 0;
          if (x + 1 < w) g += std::abs(pc[y * w + x + 1] - pc[y * w + x]);
          if (y + 1 < h) g += std::abs(pc[(y + 1) * w + x] - pc[y * w + x]);
          total += d * g;
        }
    }
  return make_op_result(
      "sdf_loss", {}, {total * scale}, {pstar_up},
      [dist = std::move(dist), scale, n, k, h, w](Node& self) {
        double* gp = input_grad(self, 0);
        if (!gp) return;
        const double g = self.grad[0] * scale;
        const auto& pv = self.inputs[0]->value;
        const int64_t hw = h * w;
        auto sign = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
        for (int64_t b = 0; b < n; ++b)
          for (int64_t c = 0; c < k; ++c) {
            const int64_t off = (b * k + c) * hw;
            const double* pc = pv.data() + off;
            double* gc = gp + off;
            for (int64_t y = 0; y < h; ++y)
              for (int64_t x = 0; x < w; ++x) {
                const double d = dist[b * hw + y * w + x];
                if (d == 0) continue;
                const int64_t i = y * w + x;
                if (x + 1 < w) {
                  const double s = g * d * sign(pc[i + 1] - pc[i]);
                  gc[i + 1] += s;
                  gc[i] -= s;
                }
                if (y + 1 < h) {
                  const double s = g * d * sign(pc[i + w] - pc[i]);
                  gc[i + w] += s;
                  gc[i] -= s;
                }
              }
          }
      });
}

LossBreakdown total_loss(const DecoderOutputs& outputs, const PseudoLabelSet& labels,
                         const LossWeights& weights) {
  weights.validate();
  require_shape(outputs.z.defined() && outputs.zstar.defined(), "total_loss: missing logits");
  const int64_t h = labels.h, w = labels.w;
  LossBreakdown out;

  Tensor zstar_up = bilinear_upsample(outputs.zstar, h, w);
  out.maps = mix_uncertainty(outputs.u_ale, zstar_up, weights.alpha, weights.beta);
  const bool has_variance = outputs.u_ale.defined();
  Tensor weight;
  if (has_variance && weights.uncertainty_weighting) weight = out.maps.weight;

  MaskStats stats;
  Tensor ce = masked_ce(zstar_up, labels, weight, &stats);
  out.empty_valid = stats.empty();
  out.valid_fraction =
      stats.total > 0 ? static_cast<double>(stats.valid) / static_cast<double>(stats.total) : 0.0;
  if (weight.defined() && stats.valid > 0) {
    auto wv = weight.data();
    double s = 0;
    for (size_t i = 0; i < labels.labels.size(); ++i)
      if (labels.counts(static_cast<int64_t>(i))) s += wv[i];
    out.mean_w = s / static_cast<double>(stats.valid);
  }
  Tensor dice = masked_dice(zstar_up, labels, weight, weights.dice_smooth);
  out.ce = ce.item();
  out.dice = dice.item();
  Tensor total = add(ce, mul_scalar(dice, weights.lambda_dice));

  if (has_variance) {
    Tensor z_up = bilinear_upsample(outputs.z, h, w);
    Tensor sigma2_up = bilinear_upsample(outputs.u_ale, h, w);
    Tensor het = heteroscedastic_loss(z_up, labels, sigma2_up);
    out.het = het.item();
    total = add(total, mul_scalar(het, weights.lambda_het));
  }
  if (outputs.edge_logits.defined()) {
    Tensor edge_up = bilinear_upsample(outputs.edge_logits, h, w);
    Mask band = boundary_band(labels, weights.band_width);
    Tensor bce_weight;
    if (weights.boundary_uncertainty_weighting && has_variance) bce_weight = out.maps.weight;
    Tensor bnd = boundary_loss(edge_up, band, weights.dice_smooth, bce_weight);
    Tensor sdf = sdf_loss(softmax(zstar_up, 1), labels);
    out.bnd = bnd.item();
    out.sdf = sdf.item();
    total = add(total, mul_scalar(bnd, weights.lambda_bnd));
    total = add(total, mul_scalar(sdf, weights.lambda_sdf));
  }
  out.total = total;
  return out;
}

}  // namespace crispdec
