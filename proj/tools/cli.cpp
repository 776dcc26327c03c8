#include "cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "crispdec/benchmark.hpp"
#include "crispdec/check.hpp"
#include "crispdec/ctsr.hpp"
#include "crispdec/dataset.hpp"
#include "crispdec/gradcheck.hpp"
#include "crispdec/metrics.hpp"
#include "crispdec/params.hpp"
#include "crispdec/pgm.hpp"
#include "crispdec/synthdata.hpp"
#include "crispdec/wsss_loop.hpp"

namespace crispdec::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw UsageError(key + ": not a number: '" + s + "'");
  return v;
}

int64_t parse_int(const std::string& key, const std::string& s) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw UsageError(key + ": not an integer: '" + s + "'");
  return v;
}

uint64_t parse_u64(const std::string& key, const std::string& s) {
  size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!s.empty() && s[0] != '-') v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw UsageError(key + ": not a non-negative integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw UsageError(key + ": expected true or false, got '" + s + "'");
}

// One tunable setting, reachable both as --key on the command line and as
// key=value in a config file.
struct Option {
  std::string key;
  std::string help;
  bool flag = false;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

class Registry {
 public:
  void add_double(const std::string& key, const std::string& help, double& target) {
    add({key, help, false, [&target, key](const std::string& s) { target = parse_double(key, s); },
         [&target] { return format_double(target); }});
  }
  template <typename Int>
  void add_int(const std::string& key, const std::string& help, Int& target) {
    add({key, help, false,
         [&target, key](const std::string& s) { target = static_cast<Int>(parse_int(key, s)); },
         [&target] { return std::to_string(target); }});
  }
  void add_u64(const std::string& key, const std::string& help, uint64_t& target) {
    add({key, help, false, [&target, key](const std::string& s) { target = parse_u64(key, s); },
         [&target] { return std::to_string(target); }});
  }
  // A flag whose presence stores `when_set` into target.
  void add_flag(const std::string& key, const std::string& help, bool& target, bool when_set) {
    add({key, help, true,
         [&target, key, when_set](const std::string& s) {
           target = parse_bool(key, s) ? when_set : !when_set;
         },
         [&target, when_set] { return target == when_set ? "true" : "false"; }});
  }

  const std::vector<Option>& options() const { return options_; }
  const Option* find(const std::string& key) const {
    for (const Option& o : options_)
      if (o.key == key) return &o;
    return nullptr;
  }

  // Registers every option on a CLI11 subcommand; values land in raw_.
  void attach(CLI::App& app) {
    for (const Option& o : options_) {
      if (o.flag)
        app.add_flag("--" + o.key, o.help);
      else
        app.add_option("--" + o.key, raw_[o.key], o.help);
    }
  }

  void apply_command_line(const CLI::App& app) const {
    for (const Option& o : options_) {
      if (app.count("--" + o.key) == 0) continue;
      o.set(o.flag ? "true" : raw_.at(o.key));
    }
  }

  // key=value lines; '#' starts a comment. Unknown keys are errors.
  void apply_file(const fs::path& path) const {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot read config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = path.string() + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw UsageError(where + ": expected key=value");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      const Option* o = find(key);
      if (!o) throw UsageError(where + ": unknown key '" + key + "'");
      o->set(value);
    }
  }

  std::string snapshot() const {
    std::ostringstream os;
    for (const Option& o : options_) os << o.key << '=' << o.get() << '\n';
    return os.str();
  }

 private:
  void add(Option o) { options_.push_back(std::move(o)); }

  std::vector<Option> options_;
  std::map<std::string, std::string> raw_;
};

// ---------------------------------------------------------------- gen

struct GenSetup {
  SceneSpec scenes;
  CorruptionSpec corruption;
  int64_t count = 100;
  int64_t first_index = 0;
  double q_start = 30.0;
};

void register_gen(Registry& r, GenSetup& g) {
  r.add_int("count", "number of scenes", g.count);
  r.add_u64("seed", "scene generator seed", g.scenes.seed);
  r.add_int("first-index", "index of the first scene", g.first_index);
  r.add_int("height", "canvas height (multiple of 32)", g.scenes.h);
  r.add_int("width", "canvas width (multiple of 32)", g.scenes.w);
  r.add_int("classes", "number of classes including background", g.scenes.num_classes);
  r.add_int("min-shapes", "fewest shapes per scene", g.scenes.min_shapes);
  r.add_int("max-shapes", "most shapes per scene", g.scenes.max_shapes);
  r.add_int("max-retries", "placement attempts per shape", g.scenes.max_retries);
  r.add_double("noise-std", "per-pixel texture noise", g.scenes.noise_std);
  r.add_double("color-jitter", "per-object colour offset", g.scenes.color_jitter);
  r.add_double("thin-bar-prob", "chance that a shape is a thin bar", g.scenes.thin_bar_prob);
  r.add_int("erode-px", "seed erosion radius", g.corruption.erode_px);
  r.add_int("dilate-px", "seed dilation radius", g.corruption.dilate_px);
  r.add_int("smooth-iters", "majority-filter passes on seeds", g.corruption.blob_smooth_iters);
  r.add_double("drop-thin-prob", "chance a thin object is missing from its seed",
               g.corruption.drop_thin_prob);
  r.add_double("flip-prob", "per-pixel random label flip rate", g.corruption.flip_prob);
  r.add_double("erode-prob", "chance an object is eroded rather than dilated",
               g.corruption.erode_prob);
  r.add_double("uncertainty-noise", "noise added to the seed uncertainty",
               g.corruption.uncertainty_noise);
  r.add_double("q-start", "percentage of seed pixels hidden by the initial mask", g.q_start);
}

bool dir_has_entries(const fs::path& dir) {
  return fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir);
}

// Removes the named entries of a previous run, leaving anything else alone.
void clear_outputs(const fs::path& dir, std::initializer_list<const char*> entries) {
  for (const char* e : entries) fs::remove_all(dir / e);
}

int cmd_gen(const GenSetup& g, const fs::path& out_dir, bool force, std::ostream& out) {
  g.scenes.validate();
  g.corruption.validate();
  if (g.count < 0) throw UsageError("count must be >= 0");
  if (g.first_index < 0) throw UsageError("first-index must be >= 0");
  if (g.q_start < 0 || g.q_start >= 100) throw UsageError("q-start must lie in [0, 100)");
  if (fs::exists(out_dir) && !fs::is_directory(out_dir))
    throw UsageError(out_dir.string() + " exists and is not a directory");
  if (dir_has_entries(out_dir)) {
    if (!force)
      throw UsageError(out_dir.string() + " is not empty (use --force to overwrite)");
    clear_outputs(out_dir, {"images", "gt", "seeds", "seed_uncertainty", "manifest.txt"});
  }

  Dataset data = generate_dataset(g.scenes, g.corruption, g.count, g.first_index, g.q_start);
  save_dataset(out_dir, data);

  out << "scenes " << data.size() << '\n';
  out << "size " << data.h << 'x' << data.w << '\n';
  out << "classes " << data.num_classes << '\n';
  if (data.size() > 0) {
    std::vector<int64_t> pixels(data.num_classes, 0);
    for (const LabelMap& gt : data.gt)
      for (int32_t v : gt.data)
        if (v >= 0 && v < data.num_classes) ++pixels[v];
    const double total = static_cast<double>(data.size() * data.h * data.w);
    out << "class_fraction";
    for (int64_t v : pixels) out << ' ' << format_double(static_cast<double>(v) / total);
    out << '\n';
    const MetricReport q = seed_quality(data);
    out << "seed_miou " << format_double(q.miou) << '\n';
    out << "seed_boundary_f1 " << format_double(q.boundary_f1) << '\n';
  }
  out << "hash " << dataset_hash(out_dir) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train / eval

struct TrainSetup {
  TrainConfig train;
  ModelConfig model;
  int64_t classes = 0;  // 0: take from the dataset
};

void register_train(Registry& r, TrainSetup& s) {
  TrainConfig& t = s.train;
  LossWeights& l = t.loss;
  DecoderConfig& d = s.model.decoder;
  r.add_int("epochs", "training epochs", t.epochs);
  r.add_int("batch-size", "images per step", t.batch_size);
  r.add_double("lr", "decoder learning rate", t.lr_decoder);
  r.add_double("lr-encoder-scale", "encoder learning rate as a fraction of lr",
               t.lr_encoder_scale);
  r.add_double("weight-decay", "decoupled weight decay on kernels", t.weight_decay);
  r.add_int("warmup-epochs", "linear warm-up epochs", t.warmup_epochs);
  r.add_double("grad-clip", "global gradient norm clip (0 disables)", t.grad_clip);
  r.add_double("q-start", "initial percentage of most uncertain pixels ignored", t.q_start);
  r.add_double("q-end", "final ignored percentage", t.q_end);
  r.add_int("q-anneal-epochs", "epochs to anneal q-start to q-end", t.q_anneal_epochs);
  r.add_double("ema-tau", "teacher momentum", t.ema_tau);
  r.add_int("relabel-period", "epochs between teacher relabels (0 disables)", t.relabel_period);
  r.add_double("keep-fraction", "share of lowest-uncertainty pixels kept when relabeling",
               t.keep_fraction);
  r.add_int("detach-epochs", "epochs with the refiner's probability input detached",
            t.detach_probs_epochs);
  r.add_flag("no-hflip", "disable horizontal flip augmentation", t.hflip, false);
  r.add_u64("seed", "initialisation and shuffling seed", t.seed);
  r.add_double("lambda-dice", "Dice loss weight", l.lambda_dice);
  r.add_double("lambda-het", "heteroscedastic loss weight", l.lambda_het);
  r.add_double("lambda-bnd", "boundary loss weight", l.lambda_bnd);
  r.add_double("lambda-sdf", "surface loss weight", l.lambda_sdf);
  r.add_double("alpha", "aleatoric share of the mixed uncertainty", l.alpha);
  r.add_double("beta", "sharpness of the uncertainty weight exp(-beta U)", l.beta);
  r.add_double("dice-smooth", "Dice smoothing constant", l.dice_smooth);
  r.add_int("band-width", "boundary band width in pixels", l.band_width);
  r.add_flag("no-uncertainty-weighting", "train with w = 1", l.uncertainty_weighting, false);
  r.add_flag("boundary-uncertainty-weighting", "scale the boundary BCE by w",
             l.boundary_uncertainty_weighting, true);
  r.add_int("classes", "number of classes (0: from the dataset)", s.classes);
  r.add_int("width", "decoder projection width", d.width);
  r.add_int("edge-hidden", "boundary head hidden channels", d.edge_hidden);
  r.add_int("stem-channels", "encoder stem channels", s.model.stem_channels);
  r.add_double("gate-bias-init", "initial refiner gate bias", d.gate_bias_init);
  r.add_double("modulation-alpha", "strength of the uncertainty shift on fusion scores",
               d.modulation_alpha);
  r.add_flag("no-dmf", "static concat + 1x1 fusion instead of dynamic fusion", d.use_dmf, false);
  r.add_flag("no-var", "drop the variance head", d.use_variance, false);
  r.add_flag("no-ugr", "drop the uncertainty-guided refiner", d.use_ugr, false);
  r.add_flag("no-bnd", "drop the boundary head", d.use_boundary, false);
  r.add_flag("no-udmf", "drop the uncertainty-modulated fusion pass", d.use_udmf, false);
  r.add_flag("no-ema", "no EMA teacher and no relabeling", t.use_ema, false);
}

void apply_preset(const std::string& name, TrainSetup& s) {
  if (name.empty() || name == "default") return;
  if (name == "desk") {
    const BenchmarkSpec b = BenchmarkSpec::desk();
    s.train = b.train;
    s.model = b.model;
    return;
  }
  throw UsageError("unknown preset '" + name + "' (expected default or desk)");
}

void validate_setup(const TrainSetup& s) {
  try {
    s.model.decoder.validate();
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (s.classes < 0) throw UsageError("classes must be >= 0");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

int cmd_train(TrainSetup& s, const Registry& registry, const fs::path& data_dir,
              const fs::path& out_dir, bool force, std::ostream& out) {
  validate_setup(s);
  if (fs::exists(out_dir) && !fs::is_directory(out_dir))
    throw UsageError(out_dir.string() + " exists and is not a directory");
  if (dir_has_entries(out_dir) && !force)
    throw UsageError(out_dir.string() + " is not empty (use --force to overwrite)");

  Dataset data;
  std::string hash;
  try {
    data = load_dataset(data_dir);
    hash = dataset_hash(data_dir);
  } catch (const std::exception& e) {
    throw DataError(std::string("cannot load dataset: ") + e.what());
  }
  if (s.classes == 0) s.classes = data.num_classes;
  if (s.classes != data.num_classes)
    throw DataError("model has " + std::to_string(s.classes) + " classes but the dataset has " +
                    std::to_string(data.num_classes));
  if (data.h % 32 != 0 || data.w % 32 != 0)
    throw DataError("image size must be a multiple of 32");
  s.model.decoder.num_classes = s.classes;

  if (dir_has_entries(out_dir))
    clear_outputs(out_dir,
                  {"checkpoint", "config.txt", "run_manifest.txt", "steps.csv", "epochs.csv"});
  fs::create_directories(out_dir);
  const std::string config = registry.snapshot();
  write_text(out_dir / "config.txt", config);

  std::ostringstream manifest;
  manifest << "version " << kVersion << '\n'
           << "command train\n"
           << "dataset " << data_dir.string() << '\n'
           << "dataset_hash " << hash << '\n'
           << "dataset_size " << data.size() << '\n'
           << "dataset_shape " << data.h << 'x' << data.w << '\n'
           << "classes " << s.classes << '\n'
           << "init_seed " << s.train.seed << '\n'
           << "shuffle_seed " << s.train.seed << '\n'
           << "output config " << (out_dir / "config.txt").string() << '\n'
           << "output checkpoint " << (out_dir / "checkpoint").string() << '\n'
           << "output steps " << (out_dir / "steps.csv").string() << '\n'
           << "output epochs " << (out_dir / "epochs.csv").string() << '\n'
           << "config\n"
           << config;
  write_text(out_dir / "run_manifest.txt", manifest.str());

  Model model = Model::init(s.model, s.train.seed);
  std::ofstream steps(out_dir / "steps.csv", std::ios::binary);
  std::ofstream epochs(out_dir / "epochs.csv", std::ios::binary);
  TrainResult result;
  try {
    result = train(s.train, data, model, {&steps, &epochs});
  } catch (const TrainingDiverged& e) {
    throw DataError(std::string("training diverged: ") + e.what());
  }
  save_checkpoint(out_dir / "checkpoint", model.named());

  out << "steps " << result.steps << '\n';
  out << "relabels " << result.relabels << '\n';
  if (!result.epochs.empty()) {
    const EpochSummary& last = result.epochs.back();
    out << "final_loss " << format_double(last.total) << '\n';
  }
  out << "checkpoint " << (out_dir / "checkpoint").string() << '\n';
  return kExitOk;
}

struct EvalSetup {
  fs::path run_dir, data_dir, out_file, dump_dir;
  int batch_size = 16;
  int band_px = 2;
  int ece_bins = 10;
};

int cmd_eval(const EvalSetup& e, std::ostream& out) {
  if (e.batch_size < 1) throw UsageError("batch-size must be >= 1");
  if (e.band_px < 1) throw UsageError("band-px must be >= 1");
  if (e.ece_bins < 1) throw UsageError("ece-bins must be >= 1");

  TrainSetup s;
  Registry registry;
  register_train(registry, s);
  Model model;
  try {
    registry.apply_file(e.run_dir / "config.txt");
    s.model.decoder.num_classes = s.classes;
    s.model.decoder.validate();
    model = Model::init(s.model, 0);
    ParamList params = model.named();
    load_checkpoint(e.run_dir / "checkpoint", params);
  } catch (const std::exception& ex) {
    throw DataError("cannot load run " + e.run_dir.string() + ": " + ex.what());
  }

  Dataset data;
  try {
    data = load_dataset(e.data_dir);
  } catch (const std::exception& ex) {
    throw DataError(std::string("cannot load dataset: ") + ex.what());
  }
  if (data.num_classes != s.classes)
    throw DataError("run was trained with " + std::to_string(s.classes) +
                    " classes but the dataset has " + std::to_string(data.num_classes));
  if (data.h % 32 != 0 || data.w % 32 != 0)
    throw DataError("image size must be a multiple of 32");

  const Prediction pred = predict(model, data, s.train.loss, e.batch_size);

  MetricOptions options;
  options.band_px = e.band_px;
  options.ece_bins = e.ece_bins;
  EvalReport report;
  report.num_classes = data.num_classes;
  std::vector<MetricReport> reports;
  for (int64_t i = 0; i < data.size(); ++i) {
    EvalRow row;
    row.name = data.names[i];
    row.report =
        evaluate_image(pred.labels[i], data.gt[i], data.num_classes, &pred.confidence[i], options);
    reports.push_back(row.report);
    report.rows.push_back(std::move(row));
  }
  report.ok_rows = data.size();
  if (!reports.empty()) report.aggregate = aggregate_reports(reports, data.num_classes);

  if (!e.dump_dir.empty()) {
    for (const char* sub : {"pred", "confidence", "uncertainty"})
      fs::create_directories(e.dump_dir / sub);
    for (int64_t i = 0; i < data.size(); ++i) {
      const std::string& name = data.names[i];
      write_pgm(e.dump_dir / "pred" / (name + ".pgm"), pred.labels[i]);
      save_ctsr(e.dump_dir / "confidence" / (name + ".ctsr"),
                Tensor::from_data({data.h, data.w}, pred.confidence[i]));
      save_ctsr(e.dump_dir / "uncertainty" / (name + ".ctsr"),
                Tensor::from_data({data.h, data.w}, pred.uncertainty[i]));
    }
  }

  const std::string csv = report.to_csv();
  if (e.out_file.empty()) {
    out << csv;
  } else {
    if (e.out_file.has_parent_path()) fs::create_directories(e.out_file.parent_path());
    write_text(e.out_file, csv);
    out << "images " << data.size() << '\n';
    out << "miou " << format_double(report.aggregate.miou) << '\n';
    out << "boundary_f1 " << format_double(report.aggregate.boundary_f1) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck / metrics / bench

int cmd_gradcheck(double tolerance, std::ostream& out) {
  if (!(tolerance > 0)) throw UsageError("tolerance must be positive");
  const GradCheckSuite suite = builtin_gradcheck_suite();
  const GradCheckSuite::Report report = suite.run(tolerance);
  for (const auto& op : report.ops) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", op.worst_rel_error);
    out << (op.passed ? "PASS " : "FAIL ") << op.op << " worst_rel_error " << buf;
    if (!op.worst_tensor.empty()) out << " at " << op.worst_tensor;
    if (!op.error.empty()) out << " error: " << op.error;
    out << '\n';
  }
  if (report.ops.empty()) out << "FAIL no gradient checks registered\n";
  out << (report.passed ? "all " + std::to_string(report.ops.size()) + " checks passed"
                        : std::string("gradient check failed"))
      << '\n';
  return report.passed ? kExitOk : kExitCheck;
}

struct MetricsSetup {
  fs::path pred_dir, gt_dir, confidence_dir, out_file;
  int64_t classes = 0;
  int band_px = 2;
  int ece_bins = 10;
  double curvature_threshold = kDefaultCurvatureThreshold;
};

int cmd_metrics(const MetricsSetup& m, std::ostream& out, std::ostream& err) {
  if (m.classes < 1) throw UsageError("classes must be >= 1");
  if (m.band_px < 1) throw UsageError("band-px must be >= 1");
  if (m.ece_bins < 1) throw UsageError("ece-bins must be >= 1");
  MetricOptions options;
  options.band_px = m.band_px;
  options.ece_bins = m.ece_bins;
  options.curvature_threshold = m.curvature_threshold;
  EvalReport report;
  try {
    std::optional<fs::path> conf;
    if (!m.confidence_dir.empty()) conf = m.confidence_dir;
    report = evaluate_directories(m.pred_dir, m.gt_dir, m.classes, conf, options);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const std::string csv = report.to_csv();
  if (m.out_file.empty())
    out << csv;
  else
    write_text(m.out_file, csv);
  if (report.rows.empty()) {
    err << "no prediction masks found in " << m.pred_dir.string() << '\n';
    return kExitData;
  }
  if (report.error_rows > 0) {
    err << report.error_rows << " image(s) could not be evaluated\n";
    return kExitData;
  }
  return kExitOk;
}

struct BenchSetup {
  std::vector<std::string> rows{"A0", "A1", "A4", "A6"};
  std::vector<uint64_t> seeds{1, 2, 3};
  int64_t train_count = 500;
  int64_t eval_count = 100;
  int epochs = 0;  // 0: the benchmark default
  fs::path out_file;
};

int cmd_bench(const BenchSetup& b, std::ostream& out) {
  BenchmarkSpec spec = BenchmarkSpec::desk();
  if (b.train_count < 1 || b.eval_count < 1) throw UsageError("scene counts must be >= 1");
  if (b.epochs < 0) throw UsageError("epochs must be >= 0");
  if (b.seeds.empty()) throw UsageError("at least one seed is needed");
  spec.train_count = b.train_count;
  spec.eval_count = b.eval_count;
  spec.run_seeds = b.seeds;
  if (b.epochs > 0) spec.train.epochs = b.epochs;
  std::vector<Ablation> rows;
  try {
    for (const std::string& r : b.rows) rows.push_back(parse_ablation(r));
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  const BenchmarkData data = make_benchmark_data(spec);
  std::ostringstream csv;
  csv << "row,seed,miou,boundary_f1,ece,seconds\n";
  auto emit = [&](const std::string& line) {
    csv << line << '\n';
    out << line << '\n';
    out.flush();
  };
  out << "row,seed,miou,boundary_f1,ece,seconds\n";
  for (Ablation a : rows) {
    double miou = 0, bf1 = 0, ece = 0;
    for (uint64_t seed : spec.run_seeds) {
      const RunResult r = run_ablation(spec, data, a, seed);
      miou += r.miou;
      bf1 += r.boundary_f1;
      ece += r.ece;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f,%.1f", ablation_name(a).c_str(),
                    static_cast<unsigned long long>(seed), r.miou, r.boundary_f1, r.ece,
                    r.seconds);
      emit(buf);
    }
    const double n = static_cast<double>(spec.run_seeds.size());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,mean,%.6f,%.6f,%.6f,", ablation_name(a).c_str(), miou / n,
                  bf1 / n, ece / n);
    emit(buf);
  }
  if (!b.out_file.empty()) write_text(b.out_file, csv.str());
  return kExitOk;
}

void apply_thread_cap() {
  const char* env = std::getenv("CRISPDEC_THREADS");
  if (!env || !*env) return;
  const int64_t n = parse_int("CRISPDEC_THREADS", env);
  if (n < 1) throw UsageError("CRISPDEC_THREADS must be >= 1");
  Eigen::setNbThreads(static_cast<int>(n));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Boundary- and uncertainty-aware segmentation decoder toolkit", "crispdec"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // gen
  GenSetup gen;
  Registry gen_registry;
  register_gen(gen_registry, gen);
  std::string gen_out, gen_config;
  bool gen_force = false;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset with weak seeds");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_flag("--force", gen_force, "overwrite an existing dataset");
  gen_cmd->add_option("--config", gen_config, "key=value file; its values override flags");
  gen_registry.attach(*gen_cmd);

  // train
  TrainSetup train_setup;
  Registry train_registry;
  register_train(train_registry, train_setup);
  std::string train_data, train_out, train_config, preset;
  bool train_force = false;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "run directory")->required();
  train_cmd->add_flag("--force", train_force, "overwrite an existing run");
  train_cmd->add_option("--config", train_config, "key=value file; its values override flags");
  train_cmd->add_option("--preset", preset, "base recipe applied before flags: default or desk");
  train_registry.attach(*train_cmd);

  // eval
  EvalSetup eval;
  std::string eval_run, eval_data, eval_out, eval_dump;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained run on a dataset");
  eval_cmd->add_option("--run", eval_run, "run directory written by train")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "CSV path (default: standard output)");
  eval_cmd->add_option("--dump-confidence", eval_dump,
                       "write predictions, confidence and uncertainty maps here");
  eval_cmd->add_option("--batch-size", eval.batch_size, "images per forward pass");
  eval_cmd->add_option("--band-px", eval.band_px, "boundary F1 tolerance band");
  eval_cmd->add_option("--ece-bins", eval.ece_bins, "calibration bins");

  // gradcheck
  double tolerance = 1e-4;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc_cmd->add_option("--tolerance", tolerance, "largest accepted relative error");

  // metrics
  MetricsSetup metrics;
  std::string m_pred, m_gt, m_conf, m_out;
  CLI::App* m_cmd = app.add_subcommand("metrics", "score mask directories against ground truth");
  m_cmd->add_option("--pred", m_pred, "directory of predicted PGM masks")->required();
  m_cmd->add_option("--gt", m_gt, "directory of ground-truth PGM masks")->required();
  m_cmd->add_option("--classes", metrics.classes, "number of classes")->required();
  m_cmd->add_option("--confidence", m_conf, "directory of CTSR confidence maps");
  m_cmd->add_option("--band-px", metrics.band_px, "boundary F1 tolerance band");
  m_cmd->add_option("--ece-bins", metrics.ece_bins, "calibration bins");
  m_cmd->add_option("--curvature-threshold", metrics.curvature_threshold,
                    "turning angle counted as irregular (radians)");
  m_cmd->add_option("--out", m_out, "CSV path (default: standard output)");

  // bench
  BenchSetup bench;
  std::string bench_out;
  CLI::App* b_cmd = app.add_subcommand("bench", "run the desk-scale ablation benchmark");
  b_cmd->add_option("--rows", bench.rows, "rows to run: A0 A1 A4 A6 no-uncertainty")
      ->delimiter(',');
  b_cmd->add_option("--seeds", bench.seeds, "run seeds")->delimiter(',');
  b_cmd->add_option("--train-count", bench.train_count, "training scenes");
  b_cmd->add_option("--eval-count", bench.eval_count, "evaluation scenes");
  b_cmd->add_option("--epochs", bench.epochs, "override the training epochs");
  b_cmd->add_option("--out", bench_out, "also write the CSV here");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_thread_cap();
    if (*gen_cmd) {
      gen_registry.apply_command_line(*gen_cmd);
      if (!gen_config.empty()) gen_registry.apply_file(gen_config);
      try {
        return cmd_gen(gen, gen_out, gen_force, out);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    if (*train_cmd) {
      apply_preset(preset, train_setup);
      train_registry.apply_command_line(*train_cmd);
      if (!train_config.empty()) train_registry.apply_file(train_config);
      return cmd_train(train_setup, train_registry, train_data, train_out, train_force, out);
    }
    if (*eval_cmd) {
      eval.run_dir = eval_run;
      eval.data_dir = eval_data;
      eval.out_file = eval_out;
      eval.dump_dir = eval_dump;
      return cmd_eval(eval, out);
    }
    if (*gc_cmd) return cmd_gradcheck(tolerance, out);
    if (*m_cmd) {
      metrics.pred_dir = m_pred;
      metrics.gt_dir = m_gt;
      metrics.confidence_dir = m_conf;
      metrics.out_file = m_out;
      return cmd_metrics(metrics, out, err);
    }
    if (*b_cmd) {
      bench.out_file = bench_out;
      return cmd_bench(bench, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckFailed& e) {
    err << "check failed: " << e.what() << '\n';
    return kExitCheck;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace crispdec::cli
