#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crispdec/dataset.hpp"
#include "crispdec/metrics.hpp"
#include "crispdec/synthdata.hpp"
#include "crispdec/wsss_loop.hpp"

namespace crispdec {

/// Rows of the component ablation that the desk-scale benchmark runs.
enum class Ablation {
  a0,              // static concat fuse, no extra heads, no teacher
  a1,              // + dynamic fusion
  a4,              // + variance head, refiner, boundary head
  a6,              // + uncertainty-modulated fusion and EMA relabeling
  no_uncertainty,  // a6 without variance head, refiner and modulation
};

std::string ablation_name(Ablation a);
/// Parses "A0", "a1", "no-uncertainty", ...
Ablation parse_ablation(const std::string& name);

/// Turns the component switches (and the teacher) on or off for a row.
void apply_ablation(Ablation a, ModelConfig& model, TrainConfig& train);

/// The frozen synthetic benchmark and the training recipe shared by every
/// ablation row. The recipe departs from the full-scale defaults where a
/// 64x64 model trained for a dozen epochs needs it (learning rate, encoder
/// rate, teacher momentum and refresh cadence).
struct BenchmarkSpec {
  SceneSpec scenes;
  CorruptionSpec corruption;
  int64_t train_count = 500;
  int64_t eval_count = 100;
  int64_t eval_first_index = 100000;  // eval scenes never overlap training scenes
  std::vector<uint64_t> run_seeds{1, 2, 3};
  TrainConfig train;
  ModelConfig model;

  static BenchmarkSpec desk();
};

struct BenchmarkData {
  Dataset train, eval;
};

BenchmarkData make_benchmark_data(const BenchmarkSpec& spec);

struct RunResult {
  Ablation ablation;
  uint64_t seed = 0;
  double miou = 0, boundary_f1 = 0, ece = 0;
  double seconds = 0;
};

/// Trains one row from scratch with one seed and evaluates it on the eval split.
RunResult run_ablation(const BenchmarkSpec& spec, const BenchmarkData& data, Ablation a,
                       uint64_t seed);

/// Mean metrics of the seeds' initial pseudo labels on a dataset.
MetricReport seed_quality(const Dataset& data);

}  // namespace crispdec
