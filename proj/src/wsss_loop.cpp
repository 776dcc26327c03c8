#include "crispdec/wsss_loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "crispdec/check.hpp"
#include "crispdec/ops.hpp"

namespace crispdec {

namespace {

// ceil(fraction * n) with a little slack so that exact products such as
// 0.25 * 16 are not pushed up by rounding noise.
int64_t ceil_count(double fraction, int64_t n) {
  const double raw = fraction * static_cast<double>(n);
  return std::clamp<int64_t>(static_cast<int64_t>(std::ceil(raw - 1e-9)), 0, n);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Horizontal mirror of a [C,H,W] block inside a flat buffer.
void flip_planes(double* data, int64_t planes, int64_t h, int64_t w) {
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < h; ++y) std::reverse(data + (p * h + y) * w, data + (p * h + y + 1) * w);
}

template <typename T>
void flip_rows(std::vector<T>& v, int64_t h, int64_t w) {
  for (int64_t y = 0; y < h; ++y) std::reverse(v.begin() + y * w, v.begin() + (y + 1) * w);
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch size must be >= 1");
  require(lr_decoder >= 0 && lr_encoder_scale >= 0, "learning rates must be >= 0");
  require(weight_decay >= 0, "weight decay must be >= 0");
  require(warmup_epochs >= 0, "warm-up epochs must be >= 0");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
          "invalid Adam moments");
  require(grad_clip >= 0, "grad clip must be >= 0");
  require(q_end >= 0 && q_end <= q_start && q_start < 100, "need 0 <= q_end <= q_start < 100");
  require(q_anneal_epochs >= 0, "q anneal epochs must be >= 0");
  require(ema_tau > 0 && ema_tau < 1, "ema tau must lie in (0, 1)");
  require(relabel_period >= 0, "relabel period must be >= 0");
  require(keep_fraction > 0 && keep_fraction < 1, "keep fraction must lie in (0, 1)");
  require(detach_probs_epochs >= 0, "detach epochs must be >= 0");
  loss.validate();
}

Mask build_ignore_mask(const std::vector<double>& uncertainty, double q_percent) {
  require(q_percent >= 0 && q_percent < 100, "q must lie in [0, 100)");
  const int64_t n = static_cast<int64_t>(uncertainty.size());
  const int64_t masked = ceil_count(q_percent / 100.0, n);
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (uncertainty[a] != uncertainty[b]) return uncertainty[a] > uncertainty[b];
    return a > b;
  });
  Mask m(n, 1);
  for (int64_t i = 0; i < masked; ++i) m[order[i]] = 0;
  return m;
}

double anneal_q(double epoch, const TrainConfig& cfg) {
  require(epoch >= 0, "epoch must be >= 0");
  if (cfg.q_anneal_epochs <= 0 || epoch >= cfg.q_anneal_epochs) return cfg.q_end;
  const double t = epoch / static_cast<double>(cfg.q_anneal_epochs);
  return cfg.q_start + (cfg.q_end - cfg.q_start) * t;
}

void ema_update(TeacherState& teacher, const ParamList& student, double tau) {
  require(tau >= 0 && tau <= 1, "ema tau must lie in [0, 1]");
  require(teacher.params.size() == student.size(),
          "teacher and student parameter lists differ in length");
  for (size_t i = 0; i < student.size(); ++i) {
    const NamedParam& s = student[i];
    NamedParam& t = teacher.params[i];
    require(t.name == s.name, "teacher/student manifest mismatch: " + t.name + " vs " + s.name);
    require_shape(t.tensor.shape() == s.tensor.shape(), "teacher/student shape mismatch for " + s.name);
    auto tv = t.tensor.mutable_data();
    auto sv = s.tensor.data();
    for (size_t j = 0; j < tv.size(); ++j) tv[j] = tau * tv[j] + (1.0 - tau) * sv[j];
  }
  ++teacher.updates;
}

PseudoLabelSet relabel(const Tensor& probs, const Tensor& uncertainty, double keep_fraction) {
  require(keep_fraction > 0 && keep_fraction <= 1, "keep fraction must lie in (0, 1]");
  require_shape(probs.defined() && probs.rank() == 4, "relabel: probabilities must be N x K x H x W");
  const int64_t n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3), hw = h * w;
  require_shape(uncertainty.defined() && uncertainty.shape() == Shape{n, 1, h, w},
                "relabel: uncertainty must be N x 1 x H x W");
  auto p = probs.data();
  auto u = uncertainty.data();
  PseudoLabelSet out;
  out.n = n;
  out.h = h;
  out.w = w;
  out.labels.assign(n * hw, kIgnoreLabel);
  out.valid.assign(n * hw, 0);
  out.seed_uncertainty.assign(u.begin(), u.end());
  const int64_t keep = ceil_count(keep_fraction, hw);
  std::vector<int64_t> order(hw);
  for (int64_t b = 0; b < n; ++b) {
    const double* ub = u.data() + b * hw;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t c) {
      if (ub[a] != ub[c]) return ub[a] < ub[c];
      return a < c;
    });
    for (int64_t r = 0; r < keep; ++r) {
      const int64_t i = order[r];
      int32_t best = 0;
      for (int64_t c = 1; c < k; ++c)
        if (p[(b * k + c) * hw + i] > p[(b * k + best) * hw + i]) best = static_cast<int32_t>(c);
      out.labels[b * hw + i] = best;
      out.valid[b * hw + i] = 1;
    }
  }
  return out;
}

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.decoder.validate();
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 0x6d6f64u};
  std::mt19937_64 rng(seq);
  Model m;
  m.cfg = cfg;
  m.encoder = EncoderParams::init(cfg.decoder.in_channels, rng, cfg.stem_channels);
  m.decoder = DecoderParams::init(cfg.decoder, rng);
  return m;
}

Model Model::clone() const {
  Model m;
  m.cfg = cfg;
  m.encoder = encoder.clone();
  m.decoder = decoder.clone();
  return m;
}

ParamList Model::named() const {
  ParamList out;
  encoder.append_to(out);
  ParamList dec = decoder.named(cfg.decoder);
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

DecoderOutputs Model::forward(const Tensor& images, ForwardOptions options) const {
  return decoder_forward(toy_encoder_forward(images, encoder), decoder, cfg.decoder, mode(),
                         options);
}

AdamW::AdamW(ParamList params, double beta1, double beta2, double eps, double weight_decay,
             double encoder_scale)
    : params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay),
      encoder_scale_(encoder_scale) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    NamedParam& p = params_[i];
    if (!p.tensor.has_grad()) continue;
    const double plr = p.is_encoder() ? lr * encoder_scale_ : lr;
    const bool decay = p.tensor.rank() == 4;
    auto x = p.tensor.mutable_data();
    auto g = p.tensor.mutable_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < x.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      if (decay) x[j] *= 1.0 - plr * weight_decay_;
      x[j] -= plr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

double learning_rate(int64_t step, int64_t steps_per_epoch, const TrainConfig& cfg) {
  const int64_t warm = static_cast<int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  const int64_t total = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  if (step < warm) return cfg.lr_decoder * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double span = static_cast<double>(std::max<int64_t>(1, total - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return cfg.lr_decoder * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

struct Batch {
  Tensor images;
  PseudoLabelSet labels;
};

Batch make_batch(const Dataset& data, const std::vector<int64_t>& indices,
                 const std::vector<uint8_t>& flips, const std::vector<LabelMap>& labels,
                 const std::vector<Mask>& valid, const std::vector<std::vector<double>>& u) {
  const int64_t h = data.h, w = data.w, hw = h * w;
  Batch b;
  b.images = data.batch_images(indices);
  auto img = b.images.mutable_data();
  b.labels.n = static_cast<int64_t>(indices.size());
  b.labels.h = h;
  b.labels.w = w;
  for (size_t i = 0; i < indices.size(); ++i) {
    const int64_t idx = indices[i];
    std::vector<int32_t> l = labels[idx].data;
    Mask m = valid[idx];
    std::vector<double> uu = u[idx];
    if (flips[i]) {
      flip_planes(img.data() + i * 3 * hw, 3, h, w);
      flip_rows(l, h, w);
      flip_rows(m, h, w);
      flip_rows(uu, h, w);
    }
    b.labels.labels.insert(b.labels.labels.end(), l.begin(), l.end());
    b.labels.valid.insert(b.labels.valid.end(), m.begin(), m.end());
    b.labels.seed_uncertainty.insert(b.labels.seed_uncertainty.end(), uu.begin(), uu.end());
  }
  b.labels.sync_mask();
  return b;
}

std::string breakdown_text(const LossBreakdown& l) {
  std::ostringstream os;
  os << "L_total=" << fmt(l.total.item()) << " L_ce=" << fmt(l.ce) << " L_dice=" << fmt(l.dice)
     << " L_het=" << fmt(l.het) << " L_bnd=" << fmt(l.bnd) << " L_sdf=" << fmt(l.sdf)
     << " mean_w=" << fmt(l.mean_w) << " valid_fraction=" << fmt(l.valid_fraction);
  return os.str();
}

struct TeacherOutputs {
  Tensor probs, uncertainty;  // at label resolution
};

TeacherOutputs teacher_pass(const Model& model, const Tensor& images, const LossWeights& weights,
                            int64_t h, int64_t w) {
  NoGradGuard no_grad;
  DecoderOutputs out = model.forward(images);
  Tensor zstar_up = bilinear_upsample(out.zstar, h, w);
  UncertaintyMaps maps = mix_uncertainty(out.u_ale, zstar_up, weights.alpha, weights.beta);
  return {softmax(zstar_up, 1), maps.u};
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, Model& model,
                  const TrainLogs& logs) {
  cfg.validate();
  data.validate();
  require(model.cfg.decoder.num_classes == data.num_classes,
          "model has " + std::to_string(model.cfg.decoder.num_classes) +
              " classes but the dataset has " + std::to_string(data.num_classes));
  const int64_t n = data.size(), h = data.h, w = data.w, hw = h * w;
  TrainResult result;
  if (logs.steps) *logs.steps << kStepCsvHeader << '\n';
  if (logs.epochs) *logs.epochs << kEpochCsvHeader << '\n';
  if (cfg.epochs == 0 || n == 0) return result;

  std::vector<LabelMap> labels = data.seeds;
  std::vector<std::vector<double>> uncertainty = data.seed_uncertainty;

  ParamList params = model.named();
  AdamW opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay,
            cfg.lr_encoder_scale);
  std::optional<Model> teacher_model;
  TeacherState teacher;
  if (cfg.use_ema) {
    teacher_model = model.clone();
    teacher.params = teacher_model->named();
  }

  std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32),
                    0x747261u};
  std::mt19937_64 rng(seq);
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochSummary summary;
    summary.epoch = epoch;
    summary.q = anneal_q(epoch, cfg);
    std::vector<Mask> valid(n);
    for (int64_t i = 0; i < n; ++i) valid[i] = build_ignore_mask(uncertainty[i], summary.q);

    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    ForwardOptions fwd;
    fwd.detach_probs = epoch < cfg.detach_probs_epochs;

    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<int64_t> idx(order.begin() + start,
                               order.begin() + std::min<int64_t>(n, start + cfg.batch_size));
      std::vector<uint8_t> flips(idx.size(), 0);
      if (cfg.hflip)
        for (auto& f : flips) f = std::uniform_int_distribution<int>(0, 1)(rng);
      Batch batch = make_batch(data, idx, flips, labels, valid, uncertainty);

      const double lr = learning_rate(step, steps_per_epoch, cfg);
      DecoderOutputs out = model.forward(batch.images, fwd);
      LossBreakdown loss = total_loss(out, batch.labels, cfg.loss);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step) + ": " + breakdown_text(loss));
      opt.zero_grad();
      loss.total.backward();
      if (cfg.grad_clip > 0) {
        double norm2 = 0;
        for (const auto& p : params)
          if (p.tensor.has_grad())
            for (double g : p.tensor.grad()) norm2 += g * g;
        const double norm = std::sqrt(norm2);
        if (norm > cfg.grad_clip)
          for (auto& p : params)
            if (p.tensor.has_grad())
              for (double& g : p.tensor.mutable_grad()) g *= cfg.grad_clip / norm;
      }
      opt.step(lr);
      if (cfg.use_ema) ema_update(teacher, params, cfg.ema_tau);

      if (logs.steps)
        *logs.steps << step << ',' << fmt(value) << ',' << fmt(loss.ce) << ',' << fmt(loss.dice)
                    << ',' << fmt(loss.het) << ',' << fmt(loss.bnd) << ',' << fmt(loss.sdf) << ','
                    << fmt(loss.mean_w) << ',' << fmt(loss.valid_fraction) << '\n';
      summary.lr = lr;
      summary.total += value;
      summary.ce += loss.ce;
      summary.dice += loss.dice;
      summary.het += loss.het;
      summary.bnd += loss.bnd;
      summary.sdf += loss.sdf;
      summary.mean_w += loss.mean_w;
      summary.valid_fraction += loss.valid_fraction;
      ++step;
    }
    const double inv = 1.0 / static_cast<double>(steps_per_epoch);
    for (double* v : {&summary.total, &summary.ce, &summary.dice, &summary.het, &summary.bnd,
                      &summary.sdf, &summary.mean_w, &summary.valid_fraction})
      *v *= inv;

    const bool relabel_now = cfg.use_ema && cfg.relabel_period > 0 &&
                             (epoch + 1) % cfg.relabel_period == 0 && epoch + 1 < cfg.epochs;
    if (relabel_now) {
      for (int64_t start = 0; start < n; start += cfg.batch_size) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min<int64_t>(n, start + cfg.batch_size); ++i)
          idx.push_back(i);
        TeacherOutputs t = teacher_pass(*teacher_model, data.batch_images(idx), cfg.loss, h, w);
        PseudoLabelSet fresh = relabel(t.probs, t.uncertainty, cfg.keep_fraction);
        for (size_t j = 0; j < idx.size(); ++j) {
          labels[idx[j]] = fresh.label_map(static_cast<int64_t>(j));
          uncertainty[idx[j]].assign(fresh.seed_uncertainty.begin() + j * hw,
                                     fresh.seed_uncertainty.begin() + (j + 1) * hw);
        }
      }
      summary.relabeled = true;
      ++result.relabels;
    }
    if (logs.epochs)
      *logs.epochs << epoch << ',' << fmt(summary.q) << ',' << fmt(summary.lr) << ','
                   << fmt(summary.total) << ',' << fmt(summary.ce) << ',' << fmt(summary.dice)
                   << ',' << fmt(summary.het) << ',' << fmt(summary.bnd) << ','
                   << fmt(summary.sdf) << ',' << fmt(summary.mean_w) << ','
                   << fmt(summary.valid_fraction) << ',' << (summary.relabeled ? 1 : 0) << '\n';
    result.epochs.push_back(summary);
  }
  result.steps = step;
  return result;
}

Prediction predict(const Model& model, const Dataset& data, const LossWeights& weights,
                   int batch_size) {
  require(batch_size >= 1, "batch size must be >= 1");
  const int64_t n = data.size(), h = data.h, w = data.w, hw = h * w;
  const int64_t k = model.cfg.decoder.num_classes;
  Prediction out;
  for (int64_t start = 0; start < n; start += batch_size) {
    std::vector<int64_t> idx;
    for (int64_t i = start; i < std::min<int64_t>(n, start + batch_size); ++i) idx.push_back(i);
    TeacherOutputs t = teacher_pass(model, data.batch_images(idx), weights, h, w);
    auto p = t.probs.data();
    auto u = t.uncertainty.data();
    for (size_t j = 0; j < idx.size(); ++j) {
      LabelMap lm(h, w);
      std::vector<double> conf(hw);
      for (int64_t i = 0; i < hw; ++i) {
        int32_t best = 0;
        for (int64_t c = 1; c < k; ++c)
          if (p[(j * k + c) * hw + i] > p[(j * k + best) * hw + i]) best = static_cast<int32_t>(c);
        lm.data[i] = best;
        conf[i] = p[(j * k + best) * hw + i];
      }
      out.labels.push_back(std::move(lm));
      out.confidence.push_back(std::move(conf));
      out.uncertainty.emplace_back(u.begin() + j * hw, u.begin() + (j + 1) * hw);
    }
  }
  return out;
}

}  // namespace crispdec
