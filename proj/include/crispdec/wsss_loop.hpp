#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crispdec/dataset.hpp"
#include "crispdec/decoder.hpp"
#include "crispdec/label_map.hpp"
#include "crispdec/losses.hpp"
#include "crispdec/params.hpp"
#include "crispdec/synthdata.hpp"

namespace crispdec {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double lr_decoder = 6e-5;
  double lr_encoder_scale = 0.1;
  double weight_decay = 1e-4;
  int warmup_epochs = 1;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  double q_start = 30.0, q_end = 15.0;
  int q_anneal_epochs = 10;
  bool use_ema = true;
  double ema_tau = 0.999;
  int relabel_period = 2;  // epochs between teacher relabels
  double keep_fraction = 0.8;
  int detach_probs_epochs = 3;
  bool hflip = true;
  uint64_t seed = 0;
  LossWeights loss;

  void validate() const;
};

/// M for one image: 0 on the ceil(q% * HW) pixels with the highest
/// uncertainty, 1 elsewhere. Among equal values the later row-major index
/// is masked first.
Mask build_ignore_mask(const std::vector<double>& uncertainty, double q_percent);

/// Linear from q_start at epoch 0 to q_end at q_anneal_epochs, then flat.
double anneal_q(double epoch, const TrainConfig& cfg);

struct TeacherState {
  ParamList params;
  int64_t updates = 0;
};

/// theta_T <- tau theta_T + (1 - tau) theta_S for every parameter. Names
/// and shapes must agree.
void ema_update(TeacherState& teacher, const ParamList& student, double tau);

/// Labels the ceil(keep * HW) lowest-uncertainty pixels of each image with
/// the argmax class and sets the rest to IGNORE (equal values: lower
/// row-major index kept first). probs [N,K,H,W], uncertainty [N,1,H,W];
/// seed_uncertainty takes the uncertainty values.
PseudoLabelSet relabel(const Tensor& probs, const Tensor& uncertainty, double keep_fraction);

struct ModelConfig {
  DecoderConfig decoder;
  int64_t stem_channels = 8;
};

struct Model {
  ModelConfig cfg;
  EncoderParams encoder;
  DecoderParams decoder;

  static Model init(const ModelConfig& cfg, uint64_t seed);
  Model clone() const;
  /// Encoder tensors first, then the decoder tensors the config uses.
  ParamList named() const;
  DecoderMode mode() const {
    return cfg.decoder.use_udmf ? DecoderMode::uncertainty_modulated : DecoderMode::plain;
  }
  DecoderOutputs forward(const Tensor& images, ForwardOptions options = {}) const;
};

/// Decoupled-weight-decay Adam. Decay applies to convolution kernels only;
/// encoder tensors use lr * encoder_scale.
class AdamW {
 public:
  AdamW(ParamList params, double beta1, double beta2, double eps, double weight_decay,
        double encoder_scale);
  void step(double lr);
  void zero_grad();
  int64_t steps() const { return t_; }

 private:
  ParamList params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_, encoder_scale_;
  int64_t t_ = 0;
};

/// One warm-up epoch of linear ramp, then cosine decay to zero.
double learning_rate(int64_t step, int64_t steps_per_epoch, const TrainConfig& cfg);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochSummary {
  int epoch = 0;
  double q = 0, lr = 0;
  double total = 0, ce = 0, dice = 0, het = 0, bnd = 0, sdf = 0, mean_w = 0, valid_fraction = 0;
  bool relabeled = false;
};

struct TrainLogs {
  std::ostream* steps = nullptr;   // per-step loss breakdown CSV
  std::ostream* epochs = nullptr;  // per-epoch CSV
};

inline constexpr const char* kStepCsvHeader =
    "step,L_total,L_ce,L_dice,L_het,L_bnd,L_sdf,mean_w,valid_fraction";
inline constexpr const char* kEpochCsvHeader =
    "epoch,q,lr,L_total,L_ce,L_dice,L_het,L_bnd,L_sdf,mean_w,valid_fraction,relabeled";

struct TrainResult {
  std::vector<EpochSummary> epochs;
  int64_t steps = 0;
  int64_t relabels = 0;
};

/// Runs the full schedule on `data` starting from `model`, which holds the
/// student weights afterwards. Throws TrainingDiverged on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const Dataset& data, Model& model,
                  const TrainLogs& logs = {});

struct Prediction {
  std::vector<LabelMap> labels;                // argmax of refined logits
  std::vector<std::vector<double>> confidence;  // max softmax per pixel
  std::vector<std::vector<double>> uncertainty;  // mixed U per pixel
};

/// Single-scale, single-pass inference on the refined logits.
Prediction predict(const Model& model, const Dataset& data, const LossWeights& weights = {},
                   int batch_size = 16);

}  // namespace crispdec
