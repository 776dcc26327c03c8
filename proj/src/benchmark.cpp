#include "crispdec/benchmark.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

#include "crispdec/check.hpp"

namespace crispdec {

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::a0: return "A0";
    case Ablation::a1: return "A1";
    case Ablation::a4: return "A4";
    case Ablation::a6: return "A6";
    case Ablation::no_uncertainty: return "no-uncertainty";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "a0") return Ablation::a0;
  if (s == "a1") return Ablation::a1;
  if (s == "a4") return Ablation::a4;
  if (s == "a6") return Ablation::a6;
  if (s == "no-uncertainty") return Ablation::no_uncertainty;
  throw DomainError("unknown ablation row '" + name + "' (expected A0, A1, A4, A6, no-uncertainty)");
}

void apply_ablation(Ablation a, ModelConfig& model, TrainConfig& train) {
  DecoderConfig& d = model.decoder;
  d.use_dmf = d.use_variance = d.use_ugr = d.use_boundary = d.use_udmf = true;
  train.use_ema = true;
  switch (a) {
    case Ablation::a0:
      d.use_dmf = false;
      [[fallthrough]];
    case Ablation::a1:
      d.use_variance = d.use_ugr = d.use_boundary = false;
      [[fallthrough]];
    case Ablation::a4:
      d.use_udmf = false;
      train.use_ema = false;
      break;
    case Ablation::a6:
      break;
    case Ablation::no_uncertainty:
      d.use_variance = d.use_ugr = d.use_udmf = false;
      break;
  }
  d.validate();
}

BenchmarkSpec BenchmarkSpec::desk() {
  BenchmarkSpec s;
  s.scenes.seed = 1;
  TrainConfig& t = s.train;
  t.epochs = 12;
  t.batch_size = 8;
  t.lr_decoder = 1e-2;
  t.lr_encoder_scale = 1.0;
  t.ema_tau = 0.99;
  t.relabel_period = 10;
  t.keep_fraction = 0.85;
  return s;
}

BenchmarkData make_benchmark_data(const BenchmarkSpec& spec) {
  BenchmarkData d;
  d.train = generate_dataset(spec.scenes, spec.corruption, spec.train_count, 0,
                             spec.train.q_start);
  d.eval = generate_dataset(spec.scenes, spec.corruption, spec.eval_count,
                            spec.eval_first_index, spec.train.q_start);
  return d;
}

RunResult run_ablation(const BenchmarkSpec& spec, const BenchmarkData& data, Ablation a,
                       uint64_t seed) {
  ModelConfig mc = spec.model;
  mc.decoder.num_classes = spec.scenes.num_classes;
  TrainConfig tc = spec.train;
  tc.seed = seed;
  apply_ablation(a, mc, tc);

  const auto start = std::chrono::steady_clock::now();
  Model model = Model::init(mc, seed);
  train(tc, data.train, model);
  Prediction pred = predict(model, data.eval, tc.loss);

  std::vector<MetricReport> reports;
  reports.reserve(data.eval.size());
  for (int64_t i = 0; i < data.eval.size(); ++i)
    reports.push_back(evaluate_image(pred.labels[i], data.eval.gt[i], data.eval.num_classes,
                                     &pred.confidence[i]));
  MetricReport agg = aggregate_reports(reports, data.eval.num_classes);

  RunResult r;
  r.ablation = a;
  r.seed = seed;
  r.miou = agg.miou;
  r.boundary_f1 = agg.boundary_f1;
  r.ece = agg.ece.value_or(0.0);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

MetricReport seed_quality(const Dataset& data) {
  std::vector<MetricReport> reports;
  reports.reserve(data.size());
  for (int64_t i = 0; i < data.size(); ++i)
    reports.push_back(evaluate_image(data.seeds[i], data.gt[i], data.num_classes));
  return aggregate_reports(reports, data.num_classes);
}

}  // namespace crispdec
