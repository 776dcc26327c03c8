// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--xfail 7,8] [--report FILE]
//
// Exit status is 0 when every selected criterion passes, or fails only where
// listed in --xfail. An xfail criterion that passes is reported and also
// makes the run fail, so the list cannot go stale silently.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "crispdec/benchmark.hpp"
#include "crispdec/gradcheck.hpp"
#include "crispdec/metrics.hpp"
#include "crispdec/ops.hpp"
#include "crispdec/wsss_loop.hpp"
#include "metric_oracles.hpp"

using namespace crispdec;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

FILE* g_report = nullptr;

// Prints to stdout and, when requested, to the report file.
void emit(const std::string& line) {
  std::fputs(line.c_str(), stdout);
  std::fflush(stdout);
  if (g_report) {
    std::fputs(line.c_str(), g_report);
    std::fflush(g_report);
  }
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = d(rng);
  return Tensor::from_data(shape, v);
}

std::map<std::string, std::vector<double>> read_fixture(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::map<std::string, std::vector<double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    double v;
    while (is >> v) out[key].push_back(v);
  }
  return out;
}

// 1 -------------------------------------------------------------------------
Verdict gradient_suite() {
  const auto start = Clock::now();
  const GradCheckSuite::Report r = builtin_gradcheck_suite().run(1e-4);
  const double secs = seconds_since(start);
  double worst = 0;
  std::string worst_op, failed;
  for (const auto& op : r.ops) {
    if (op.worst_rel_error >= worst) {
      worst = op.worst_rel_error;
      worst_op = op.op;
    }
    if (!op.passed) failed += " " + op.op;
  }
  Verdict v;
  v.pass = r.passed && secs < 120.0;
  v.detail = std::to_string(r.ops.size()) + " ops, worst rel error " + fmt("%.2e", worst) + " (" +
             worst_op + "), " + fmt("%.1f", secs) + " s; limits 1e-4 and 120 s";
  if (!failed.empty()) v.detail += "; failing:" + failed;
  return v;
}

// 2 -------------------------------------------------------------------------
Verdict fusion_invariants() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> small(1, 4);
  double worst_sum = 0, worst_hull = 0, worst_zero = 0, worst_alpha0 = 0, worst_shift = 0;
  bool in_open_interval = true;
  for (int trial = 0; trial < 1000; ++trial) {
    DecoderConfig cfg;
    cfg.width = small(rng);
    const int64_t n = small(rng), h = small(rng), w = small(rng);
    std::array<Tensor, 4> e;
    for (auto& t : e) t = random_tensor({n, cfg.width, h, w}, rng, -3, 3);
    DecoderParams params = DecoderParams::init(cfg, rng);
    const Tensor u = random_tensor({n, 1, h, w}, rng, 0, 2);

    // Zero-initialised scores.
    FusionResult zero = dmf_fuse(e, params, cfg);
    for (double x : zero.weights.data()) worst_zero = std::max(worst_zero, std::abs(x - 0.25));

    for (auto& s : params.score) {
      s.weight = random_tensor(s.weight.shape(), rng, -2, 2);
      s.bias = random_tensor(s.bias.shape(), rng, -2, 2);
    }
    DecoderConfig modulated = cfg;
    modulated.modulation_alpha = 1.5;
    for (const FusionResult& f :
         {dmf_fuse(e, params, cfg), dmf_fuse(e, params, modulated, u)}) {
      auto wt = f.weights.data();
      const int64_t hw = h * w;
      for (int64_t b = 0; b < n; ++b)
        for (int64_t p = 0; p < hw; ++p) {
          double total = 0;
          for (int i = 0; i < 4; ++i) {
            const double x = wt[(b * 4 + i) * hw + p];
            in_open_interval = in_open_interval && x > 0 && x < 1;
            total += x;
          }
          worst_sum = std::max(worst_sum, std::abs(total - 1.0));
          for (int64_t c = 0; c < cfg.width; ++c) {
            double lo = 1e300, hi = -1e300;
            for (const Tensor& t : e) {
              const double x = t.data()[(b * cfg.width + c) * hw + p];
              lo = std::min(lo, x);
              hi = std::max(hi, x);
            }
            const double fv = f.fused.data()[(b * cfg.width + c) * hw + p];
            worst_hull = std::max({worst_hull, lo - fv, fv - hi});
          }
        }
    }
    // alpha = 0 must be bit-identical to no modulation.
    DecoderConfig neutral = cfg;
    neutral.modulation_alpha = 0.0;
    const FusionResult plain = dmf_fuse(e, params, cfg);
    const FusionResult a0 = dmf_fuse(e, params, neutral, u);
    for (int64_t i = 0; i < plain.fused.numel(); ++i)
      worst_alpha0 = std::max(worst_alpha0, std::abs(plain.fused.data()[i] - a0.fused.data()[i]));
    for (int64_t i = 0; i < plain.weights.numel(); ++i)
      worst_alpha0 =
          std::max(worst_alpha0, std::abs(plain.weights.data()[i] - a0.weights.data()[i]));
    // The uniform shift leaves the weights where they were.
    const FusionResult shifted = dmf_fuse(e, params, modulated, u);
    for (int64_t i = 0; i < plain.weights.numel(); ++i)
      worst_shift =
          std::max(worst_shift, std::abs(plain.weights.data()[i] - shifted.weights.data()[i]));
  }
  Verdict v;
  v.pass = worst_sum <= 1e-5 && in_open_interval && worst_hull <= 1e-12 && worst_zero == 0.0 &&
           worst_alpha0 == 0.0 && worst_shift <= 1e-12;
  v.detail = "1000 inputs; |sum w - 1| " + fmt("%.1e", worst_sum) + ", hull excess " +
             fmt("%.1e", std::max(0.0, worst_hull)) + ", zero-score |w - 0.25| " +
             fmt("%.1e", worst_zero) + ", alpha=0 diff " + fmt("%.1e", worst_alpha0) +
             ", uniform-shift weight change " + fmt("%.1e", worst_shift) +
             (in_open_interval ? "" : ", weight outside (0,1)");
  return v;
}

// 3 -------------------------------------------------------------------------
Verdict ugr_contract() {
  std::mt19937_64 rng(3);
  DecoderConfig cfg;
  cfg.width = 6;
  cfg.num_classes = 3;
  double worst_closed = 0, detached_grad = 0, attached_grad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    DecoderParams params = DecoderParams::init(cfg, rng);
    params.refine_out.weight = random_tensor(params.refine_out.weight.shape(), rng, -2, 2);
    params.refine_out.bias = random_tensor(params.refine_out.bias.shape(), rng, -2, 2);
    const Tensor f = random_tensor({2, 6, 4, 4}, rng, -2, 2);
    const Tensor u = random_tensor({2, 1, 4, 4}, rng, 0, 2);

    DecoderParams closed = params.clone();
    closed.gate.weight = Tensor::zeros(closed.gate.weight.shape());
    closed.gate.bias = Tensor::full(closed.gate.bias.shape(), -40.0);
    const Tensor z = random_tensor({2, 3, 4, 4}, rng, -3, 3);
    RefineResult r = ugr_refine(f, z, u, closed);
    for (int64_t i = 0; i < z.numel(); ++i)
      worst_closed = std::max(worst_closed, std::abs(r.zstar.data()[i] - z.data()[i]));

    for (bool detach : {true, false}) {
      Tensor zg = Tensor::from_data(z.shape(), {z.data().begin(), z.data().end()}, true);
      RefineResult rr = ugr_refine(f, zg, u, params, detach);
      sum(rr.delta).backward();
      double g = 0;
      if (zg.has_grad())
        for (double x : zg.grad()) g += std::abs(x);
      (detach ? detached_grad : attached_grad) += g;
    }
  }
  Verdict v;
  v.pass = worst_closed <= 1e-6 && detached_grad == 0.0 && attached_grad > 0.0;
  v.detail = "gate logit -40: max |Z* - Z| " + fmt("%.1e", worst_closed) +
             " (limit 1e-6); |dDelta/dZ| detached " + fmt("%.1e", detached_grad) + ", attached " +
             fmt("%.1e", attached_grad);
  return v;
}

// 4 -------------------------------------------------------------------------
Verdict loss_closed_forms() {
  std::mt19937_64 rng(4);
  double worst_ce = 0;
  for (int64_t k : {2, 3, 4, 7}) {
    std::vector<LabelMap> maps(2, LabelMap(5, 5));
    for (auto& m : maps)
      for (auto& x : m.data) x = static_cast<int32_t>(rng() % k);
    PseudoLabelSet labels = PseudoLabelSet::from_label_maps(maps);
    const double ce = masked_ce(Tensor::zeros({2, k, 5, 5}), labels, {}).item();
    worst_ce = std::max(worst_ce, std::abs(ce - std::log(static_cast<double>(k))));
  }

  std::vector<LabelMap> maps(1, LabelMap(6, 6));
  for (auto& x : maps[0].data) x = static_cast<int32_t>(rng() % 3);
  PseudoLabelSet labels = PseudoLabelSet::from_label_maps(maps);
  const Tensor z = random_tensor({1, 3, 6, 6}, rng, -3, 3);
  const double ce = masked_ce(z, labels, {}).item();
  const double het = heteroscedastic_loss(z, labels, Tensor::full({1, 1, 6, 6}, 1.0)).item();
  const double het_err = std::abs(het - 0.5 * ce);

  // Pixel 0 carries both the largest aleatoric value and uniform logits, so
  // both normalised maps reach 1 there and U = 1.
  std::vector<double> zs(3 * 36);
  for (double& x : zs) x = std::uniform_real_distribution<double>(-3, 3)(rng);
  for (int c = 0; c < 3; ++c) zs[c * 36] = 0.0;
  std::vector<double> ua(36, 0.2);
  ua[0] = 0.9;
  ua[7] = 0.1;
  UncertaintyMaps m = mix_uncertainty(Tensor::from_data({1, 1, 6, 6}, ua),
                                      Tensor::from_data({1, 3, 6, 6}, zs), 0.5, 2.0);
  const double u0 = m.u.data()[0];
  const double w_err = std::abs(m.weight.data()[0] - std::exp(-2.0));

  Verdict v;
  v.pass = worst_ce <= 1e-9 && het_err <= 1e-9 && std::abs(u0 - 1.0) <= 1e-12 && w_err <= 1e-9;
  v.detail = "|CE - ln K| " + fmt("%.1e", worst_ce) + ", |het - CE/2| " + fmt("%.1e", het_err) +
             ", |w - e^-2| at U=" + fmt("%.3f", u0) + ": " + fmt("%.1e", w_err) +
             " (limit 1e-9)";
  return v;
}

// 5 -------------------------------------------------------------------------
Verdict metric_oracles() {
  using namespace testoracle;
  const auto zoo = shape_zoo();
  const int64_t n = 24;
  double worst = 0;
  int masks = 0;
  for (const auto& [name, labels] : zoo) {
    ++masks;
    const Mask m = binary(labels);
    worst = std::max(worst, std::abs(tv_smoothness(m, n, n) -
                                     (1.0 - oracle_transitions(m, n, n) / (2.0 * n * n))));
    int64_t area = 0;
    for (uint8_t x : m) area += x;
    const double p = static_cast<double>(oracle_perimeter(m, n, n));
    const double comp = area ? std::min(1.0, 4 * std::numbers::pi * area / (p * p)) : 0.0;
    worst = std::max(worst, std::abs(compactness(m, n, n) - comp));
  }
  for (const auto& [pn, pred] : zoo)
    for (const auto& [gn, gt] : zoo) {
      worst = std::max(worst, std::abs(miou(pred, gt, 2).mean - oracle_miou(pred, gt, 2)));
      worst = std::max(worst, std::abs(boundary_f1(pred, gt) - oracle_bf1(pred, gt, 2)));
    }

  // Edge regularity against chain-walk counts: a rectangle flags its four
  // corners out of 2(a+b)-4 ring pixels, a 1-px line its two ends, a
  // staircase every pixel.
  for (int64_t a = 3; a <= 9; a += 3)
    for (int64_t b = 3; b <= 12; b += 3) {
      const LabelMap r = paint(20, 20, [&](auto y, auto x) { return y >= 2 && y < 2 + a && x >= 3 && x < 3 + b; });
      worst = std::max(worst, std::abs(edge_regularity(binary(r), 20, 20) - 4.0 / (2.0 * (a + b) - 4)));
      ++masks;
    }
  const LabelMap line = paint(20, 20, [](auto y, auto x) { return y == 9 && x >= 2 && x < 14; });
  worst = std::max(worst, std::abs(edge_regularity(binary(line), 20, 20) - 2.0 / 12));
  const LabelMap stair = paint(20, 20, [](auto y, auto x) { return y >= 2 && y < 16 && (x == y || x == y + 1); });
  worst = std::max(worst, std::abs(edge_regularity(binary(stair), 20, 20) - 1.0));
  masks += 2;

  // ECE by hand summation.
  std::vector<double> conf;
  std::vector<uint8_t> ok;
  for (int i = 0; i < 20; ++i) {
    conf.push_back(i < 10 ? 0.9 : 0.6);
    ok.push_back(i < 10 ? i < 5 : i < 16);
  }
  worst = std::max(worst, std::abs(ece(conf, ok) - 0.2));
  worst = std::max(worst, std::abs(ece(std::vector<double>(10, 0.8), {1, 1, 1, 1, 1, 1, 1, 1, 0, 0})));

  const LabelMap square = paint(32, 32, [](auto y, auto x) { return y >= 4 && y < 17 && x >= 9 && x < 22; });
  const double sq = compactness(binary(square), 32, 32);
  const LabelMap half = paint(32, 32, [](auto, auto x) { return x >= 16; });
  const double bf1_1 = boundary_f1(shift_right(half, 1), half, 2);
  const double bf1_3 = boundary_f1(shift_right(half, 3), half, 2);

  Verdict v;
  v.pass = masks >= 20 && worst <= 1e-12 && sq == std::numbers::pi / 4 && bf1_1 == 1.0 &&
           bf1_3 == 0.0;
  v.detail = std::to_string(masks) + " masks, worst oracle gap " + fmt("%.1e", worst) +
             "; square compactness " + fmt("%.17g", sq) + "; BF1 shift 1px " +
             fmt("%.3f", bf1_1) + ", 3px " + fmt("%.3f", bf1_3);
  return v;
}

// 6 -------------------------------------------------------------------------
Verdict loop_invariants() {
  std::mt19937_64 rng(6);
  double worst_ema = 0;
  for (double tau : {0.0, 0.5, 0.9, 0.999, 1.0}) {
    ParamList student{{"p", random_tensor({3, 4}, rng), "decoder"}};
    TeacherState t{{{"p", random_tensor({3, 4}, rng), "decoder"}}, 0};
    std::vector<double> gap(12);
    for (int i = 0; i < 12; ++i) gap[i] = t.params[0].tensor.data()[i] - student[0].tensor.data()[i];
    ema_update(t, student, tau);
    for (int i = 0; i < 12; ++i)
      worst_ema = std::max(worst_ema, std::abs((t.params[0].tensor.data()[i] -
                                                student[0].tensor.data()[i]) - tau * gap[i]));
  }

  bool counts_ok = true;
  std::uniform_int_distribution<int> level(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const int64_t hw = 1 + trial % 97;
    std::vector<double> u(hw);
    for (double& x : u) x = level(rng) * 0.25;  // heavy ties
    const double q = (trial * 7 % 100) * 0.99;
    const Mask m = build_ignore_mask(u, q);
    const int64_t zeros = std::count(m.begin(), m.end(), uint8_t{0});
    counts_ok = counts_ok && zeros == static_cast<int64_t>(std::ceil(q / 100.0 * hw - 1e-9));

    const double keep = 0.05 + (trial % 19) * 0.05;
    Tensor probs = softmax(random_tensor({1, 3, 1, hw}, rng), 1);
    PseudoLabelSet r = relabel(probs, Tensor::from_data({1, 1, 1, hw}, u), keep);
    int64_t kept = 0;
    for (int32_t l : r.labels) kept += l != kIgnoreLabel;
    counts_ok = counts_ok && kept == static_cast<int64_t>(std::ceil(keep * hw - 1e-9));
  }

  TrainConfig cfg;
  const bool q_ok = anneal_q(0, cfg) == 30.0 && anneal_q(10, cfg) == 15.0 &&
                    anneal_q(14, cfg) == 15.0 && anneal_q(40, cfg) == 15.0;
  Verdict v;
  v.pass = worst_ema <= 1e-12 && counts_ok && q_ok;
  v.detail = "EMA contraction error " + fmt("%.1e", worst_ema) + "; ignore/relabel counts " +
             (counts_ok ? "exact" : "WRONG") + " over 300 tied inputs; q(0)=" +
             fmt("%g", anneal_q(0, cfg)) + " q(10)=" + fmt("%g", anneal_q(10, cfg));
  return v;
}

// 7 and 8 -------------------------------------------------------------------
struct BenchOutcome {
  std::map<Ablation, RunResult> mean;
  double minutes_7 = 0;  // the four waterfall rows only
};

BenchOutcome run_benchmark(bool need_waterfall, bool need_calibration) {
  const BenchmarkSpec spec = BenchmarkSpec::desk();
  const auto start = Clock::now();
  const BenchmarkData data = make_benchmark_data(spec);
  const double data_secs = seconds_since(start);
  BenchOutcome out;
  std::vector<Ablation> rows;
  if (need_waterfall) rows = {Ablation::a0, Ablation::a1, Ablation::a4, Ablation::a6};
  else if (need_calibration) rows = {Ablation::a6};
  if (need_calibration) rows.push_back(Ablation::no_uncertainty);
  double waterfall_secs = data_secs;
  for (Ablation a : rows) {
    RunResult m{a, 0, 0, 0, 0, 0};
    for (uint64_t seed : spec.run_seeds) {
      RunResult r = run_ablation(spec, data, a, seed);
      char buf[160];
      std::snprintf(buf, sizeof buf, "  bench %-14s seed %llu  miou %.4f  bf1 %.4f  ece %.4f  %.0f s\n",
                    ablation_name(a).c_str(), static_cast<unsigned long long>(seed), r.miou,
                    r.boundary_f1, r.ece, r.seconds);
      emit(buf);
      const double k = 1.0 / static_cast<double>(spec.run_seeds.size());
      m.miou += k * r.miou;
      m.boundary_f1 += k * r.boundary_f1;
      m.ece += k * r.ece;
      m.seconds += r.seconds;
    }
    if (a != Ablation::no_uncertainty) waterfall_secs += m.seconds;
    out.mean[a] = m;
  }
  out.minutes_7 = waterfall_secs / 60.0;
  return out;
}

Verdict ablation_waterfall(const BenchOutcome& b, const fs::path& fixture) {
  const auto fx = read_fixture(fixture);
  const double slack = fx.at("ordering_slack").at(0);
  const double min_gain = fx.at("min_miou_gain").at(0);
  const double max_minutes = fx.at("max_minutes").at(0);
  const RunResult &a0 = b.mean.at(Ablation::a0), &a1 = b.mean.at(Ablation::a1),
                  &a4 = b.mean.at(Ablation::a4), &a6 = b.mean.at(Ablation::a6);
  std::string broken;
  auto order = [&](const RunResult& lo, const RunResult& hi, const char* what) {
    if (lo.miou > hi.miou + slack) broken += std::string(" mIoU ") + what;
    if (lo.boundary_f1 > hi.boundary_f1 + slack) broken += std::string(" BF1 ") + what;
  };
  order(a0, a1, "A0<=A1");
  order(a1, a4, "A1<=A4");
  order(a4, a6, "A4<=A6");
  const double gain = a6.miou - a0.miou;
  if (gain < min_gain) broken += " gain";
  if (!(a6.boundary_f1 > a0.boundary_f1)) broken += " BF1 A6>A0";
  if (b.minutes_7 > max_minutes) broken += " time";

  Verdict v;
  v.pass = broken.empty();
  std::string rows;
  for (const auto& [a, r] : b.mean) {
    if (a == Ablation::no_uncertainty) continue;
    rows += " " + ablation_name(a) + " " + fmt("%.4f", r.miou) + "/" + fmt("%.4f", r.boundary_f1);
    const auto it = fx.find("calib_" + ablation_name(a));
    if (it != fx.end()) rows += " (calib " + fmt("%.4f", it->second.at(0)) + ")";
  }
  v.detail = "mean mIoU/BF1:" + rows + "; A6-A0 gain " + fmt("%+.4f", gain) + " (need >= " +
             fmt("%.2f", min_gain) + "); " + fmt("%.1f", b.minutes_7) + " min" +
             (broken.empty() ? "" : "; violated:" + broken);
  return v;
}

Verdict calibration_direction(const BenchOutcome& b) {
  const double full = b.mean.at(Ablation::a6).ece;
  const double none = b.mean.at(Ablation::no_uncertainty).ece;
  Verdict v;
  v.pass = full <= none;
  v.detail = "mean ECE full " + fmt("%.4f", full) + " vs no-uncertainty " + fmt("%.4f", none);
  return v;
}

// 9 -------------------------------------------------------------------------
Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "crispdec_acceptance_det";
  fs::remove_all(root);
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  auto checkpoint = [&](const fs::path& dir) {
    std::set<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path());
    std::string all;
    for (const auto& f : files) all += f.filename().string() + '\0' + slurp(f);
    return all;
  };
  Verdict v;
  int codes = run({"gen", "--count", "24", "--seed", "9", "--out", (root / "data").string()});
  for (const char* r : {"run_a", "run_b"})
    codes |= run({"train", "--data", (root / "data").string(), "--out", (root / r).string(),
                  "--preset", "desk", "--epochs", "3", "--batch-size", "4", "--relabel-period",
                  "1", "--seed", "5"});
  for (const char* e : {"a.csv", "b.csv"})
    codes |= run({"eval", "--run", (root / "run_a").string(), "--data", (root / "data").string(),
                  "--out", (root / e).string()});
  if (codes != 0) {
    v.detail = "a command failed: " + sink.str();
    fs::remove_all(root);
    return v;
  }
  const std::string ca = checkpoint(root / "run_a/checkpoint"), cb = checkpoint(root / "run_b/checkpoint");
  const std::string ea = slurp(root / "a.csv"), eb = slurp(root / "b.csv");
  const bool logs = slurp(root / "run_a/steps.csv") == slurp(root / "run_b/steps.csv");
  v.pass = !ca.empty() && ca == cb && !ea.empty() && ea == eb && logs;
  v.detail = "checkpoints " + std::string(ca == cb ? "identical" : "DIFFER") + " (" +
             std::to_string(ca.size()) + " bytes), eval CSV " + (ea == eb ? "identical" : "DIFFERS") +
             ", step logs " + (logs ? "identical" : "DIFFER");
  fs::remove_all(root);
  return v;
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, xfail;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--only" || a == "--xfail") && i + 1 < argc) {
      (a == "--only" ? only : xfail) = parse_list(argv[++i]);
    } else if (a == "--report" && i + 1 < argc) {
      g_report = std::fopen(argv[++i], "w");
      if (!g_report) {
        std::fprintf(stderr, "cannot write %s\n", argv[i]);
        return 2;
      }
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--xfail 7,8] [--report FILE]\n");
      return 2;
    }
  }
  auto selected = [&](int c) { return only.empty() || only.count(c) > 0; };

  int failures = 0, unexpected = 0, ran = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& f) {
    if (!selected(id)) return;
    ++ran;
    Verdict v;
    const auto start = Clock::now();
    try {
      v = f();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("threw: ") + e.what();
    }
    const bool expected_fail = xfail.count(id) > 0;
    const char* tag = v.pass ? (expected_fail ? "XPASS" : "PASS") : (expected_fail ? "XFAIL" : "FAIL");
    emit(std::string(tag) + std::string(6 - std::string(tag).size(), ' ') + std::to_string(id) +
         " " + name + ": " + v.detail + " [" + fmt("%.1f", seconds_since(start)) + " s]\n");
    if (!v.pass) ++failures;
    if (v.pass == expected_fail) ++unexpected;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "fusion invariants", fusion_invariants);
  report(3, "refiner contract", ugr_contract);
  report(4, "loss closed forms", loss_closed_forms);
  report(5, "metric oracles", metric_oracles);
  report(6, "loop invariants", loop_invariants);
  report(9, "determinism", determinism);

  if (selected(7) || selected(8)) {
    std::optional<BenchOutcome> bench;
    std::string error;
    try {
      bench = run_benchmark(selected(7), selected(8));
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto need = [&](auto f) {
      return [&, f]() -> Verdict {
        if (!bench) return {false, "benchmark threw: " + error};
        return f(*bench);
      };
    };
    report(7, "ablation waterfall", need([](const BenchOutcome& b) {
             return ablation_waterfall(b, fs::path(CRISPDEC_FIXTURE_DIR) / "ablation_thresholds.txt");
           }));
    report(8, "calibration direction", need([](const BenchOutcome& b) { return calibration_direction(b); }));
  }

  std::string summary = std::to_string(ran) + " criteria run, " + std::to_string(ran - failures) +
                        " passed, " + std::to_string(failures) + " failed";
  if (!xfail.empty())
    summary += ", " + std::to_string(unexpected) + " not matching the expected-failure list";
  emit(summary + "\n");
  if (g_report) std::fclose(g_report);
  return unexpected == 0 ? 0 : 1;
}
