#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include "crispdec/benchmark.hpp"
#include "crispdec/gradcheck.hpp"
#include "crispdec/metrics.hpp"
#include "crispdec/synthdata.hpp"
#include "test_util.hpp"

using namespace crispdec;
namespace fs = std::filesystem;

namespace {

int64_t count_label(const LabelMap& m, int32_t label) {
  return std::count(m.data.begin(), m.data.end(), label);
}

CorruptionSpec no_corruption() {
  CorruptionSpec c;
  c.erode_px = c.dilate_px = c.blob_smooth_iters = 0;
  c.drop_thin_prob = c.flip_prob = 0;
  c.uncertainty_noise = 0;
  return c;
}

std::map<std::string, double> read_fixture(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    double v;
    is >> key >> v;
    out[key] = v;
  }
  return out;
}

}  // namespace

TEST_CASE("scene generation") {
  SceneSpec spec;
  spec.seed = 3;

  SUBCASE("no shapes means all background") {
    SceneSpec empty = spec;
    empty.min_shapes = empty.max_shapes = 0;
    Scene s = generate_scene(empty, 0);
    CHECK(count_label(s.gt, 0) == 64 * 64);
    CHECK(s.shapes.empty());
  }
  SUBCASE("deterministic per seed and index") {
    Scene a = generate_scene(spec, 17), b = generate_scene(spec, 17), c = generate_scene(spec, 18);
    CHECK(a.gt == b.gt);
    CHECK(testutil::max_abs_diff(a.image.data(), b.image.data()) == 0.0);
    CHECK_FALSE(a.gt == c.gt);
  }
  SUBCASE("shapes stay disjoint, inside the canvas and match the label map") {
    for (int64_t idx = 0; idx < 40; ++idx) {
      Scene s = generate_scene(spec, idx);
      LabelMap painted(64, 64, 0);
      int64_t shape_pixels = 0;
      for (const PlacedShape& shape : s.shapes) {
        LabelMap one(64, 64, 0);
        rasterize_shape(shape, one);
        for (int64_t i = 0; i < one.size(); ++i) {
          if (!one.data[i]) continue;
          CHECK(painted.data[i] == 0);
          painted.data[i] = one.data[i];
          ++shape_pixels;
        }
        if (shape.kind == ShapeKind::thin_bar) {
          CHECK(shape.size_b >= 1);
          CHECK(shape.size_b <= 3);
        }
      }
      CHECK(painted == s.gt);
      CHECK(s.image.shape() == Shape{3, 64, 64});
    }
  }
  SUBCASE("disk area follows pi r^2") {
    for (int r : {5, 8, 12, 20}) {
      PlacedShape disk{ShapeKind::disk, 1, 32, 32, static_cast<double>(r), 0};
      LabelMap m(64, 64, 0);
      rasterize_shape(disk, m);
      const double area = static_cast<double>(count_label(m, 1));
      CHECK(std::abs(area - std::numbers::pi * r * r) <= 0.05 * std::numbers::pi * r * r);
    }
  }
  SUBCASE("rectangle covers its full extent") {
    PlacedShape rect{ShapeKind::rectangle, 2, 20, 30, 4, 7};
    LabelMap m(64, 64, 0);
    rasterize_shape(rect, m);
    CHECK(count_label(m, 2) == 9 * 15);
  }
  SUBCASE("classes look different") {
    SceneSpec quiet = spec;
    quiet.noise_std = 0;
    quiet.color_jitter = 0;
    Scene s = generate_scene(quiet, 2);
    std::map<int32_t, std::array<double, 3>> colour;
    for (int64_t i = 0; i < s.gt.size(); ++i)
      for (int c = 0; c < 3; ++c) colour[s.gt.data[i]][c] = s.image.data()[c * 4096 + i];
    for (const auto& [a, ca] : colour)
      for (const auto& [b, cb] : colour)
        if (a < b)
          CHECK(std::abs(ca[0] - cb[0]) + std::abs(ca[1] - cb[1]) + std::abs(ca[2] - cb[2]) > 0.1);
  }
  SUBCASE("invalid specs are rejected") {
    SceneSpec bad = spec;
    bad.h = 60;
    CHECK_THROWS(generate_scene(bad, 0));
    bad = spec;
    bad.max_shapes = 1;
    bad.min_shapes = 2;
    CHECK_THROWS(generate_scene(bad, 0));
  }
}

TEST_CASE("seed corruption") {
  std::mt19937_64 rng(5);

  SUBCASE("identity corruption keeps the ground truth") {
    Scene s = generate_scene(SceneSpec{}, 4);
    PseudoLabelSet p = corrupt_to_seed(s.gt, 4, no_corruption(), 30.0, rng);
    int64_t ignored = 0;
    for (int64_t i = 0; i < s.gt.size(); ++i) {
      CHECK(p.labels[i] == s.gt.data[i]);
      ignored += p.valid[i] == 0;
    }
    CHECK(ignored == static_cast<int64_t>(std::ceil(0.3 * 4096 - 1e-9)));
  }
  SUBCASE("erosion of a disk keeps the inner disk") {
    LabelMap gt(64, 64, 0);
    rasterize_shape({ShapeKind::disk, 1, 32, 32, 10, 0}, gt);
    CorruptionSpec c = no_corruption();
    c.erode_px = 2;
    c.erode_prob = 1.0;
    PseudoLabelSet p = corrupt_to_seed(gt, 2, c, 0.0, rng);
    const LabelMap seed = p.label_map(0);
    int64_t kept = 0, outside = 0;
    for (int64_t i = 0; i < gt.size(); ++i) {
      kept += seed.data[i] == 1;
      outside += seed.data[i] == 1 && gt.data[i] != 1;
    }
    CHECK(outside == 0);
    const double iou = miou(seed, gt, 2).per_class[1].value();
    CHECK(iou == doctest::Approx(static_cast<double>(kept) / count_label(gt, 1)));
    CHECK(std::abs(iou - 0.64) < 0.06);
  }
  SUBCASE("dilation leaks into the background only") {
    LabelMap gt(64, 64, 0);
    rasterize_shape({ShapeKind::disk, 2, 32, 32, 8, 0}, gt);
    CorruptionSpec c = no_corruption();
    c.dilate_px = 2;
    c.erode_prob = 0.0;
    const LabelMap seed = corrupt_to_seed(gt, 3, c, 0.0, rng).label_map(0);
    for (int64_t i = 0; i < gt.size(); ++i)
      if (gt.data[i] == 2) CHECK(seed.data[i] == 2);
    CHECK(count_label(seed, 2) > count_label(gt, 2));
  }
  SUBCASE("thin bars vanish when always dropped") {
    CorruptionSpec c;
    c.drop_thin_prob = 1.0;
    c.flip_prob = 0.0;
    SceneSpec spec;
    spec.thin_bar_prob = 0.6;
    int checked = 0;
    for (int64_t idx = 0; idx < 20; ++idx) {
      Scene s = generate_scene(spec, idx);
      const LabelMap seed = corrupt_to_seed(s.gt, 4, c, 0.0, rng).label_map(0);
      for (const PlacedShape& shape : s.shapes) {
        if (shape.kind != ShapeKind::thin_bar) continue;
        LabelMap one(64, 64, 0);
        rasterize_shape(shape, one);
        int64_t surviving = 0, bar = 0;
        for (int64_t i = 0; i < one.size(); ++i)
          if (one.data[i]) {
            ++bar;
            surviving += seed.data[i] == shape.label;
          }
        // Only a neighbour's dilation may paint over a dropped bar.
        CHECK(surviving < bar / 2);
        ++checked;
      }
    }
    CHECK(checked > 5);
  }
  SUBCASE("seed uncertainty peaks at seed boundaries") {
    Scene s = generate_scene(SceneSpec{}, 9);
    CorruptionSpec c = no_corruption();
    PseudoLabelSet p = corrupt_to_seed(s.gt, 4, c, 0.0, rng);
    const Mask edge = label_boundary(p.label_map(0));
    for (int64_t i = 0; i < s.gt.size(); ++i) {
      CHECK(p.seed_uncertainty[i] >= 0.0);
      CHECK(p.seed_uncertainty[i] <= 1.0);
      if (edge[i]) CHECK(p.seed_uncertainty[i] == 1.0);
    }
  }
  SUBCASE("ground truth is untouched") {
    Scene s = generate_scene(SceneSpec{}, 1);
    const LabelMap before = s.gt;
    corrupt_to_seed(s.gt, 4, CorruptionSpec{}, 30.0, rng);
    CHECK(s.gt == before);
  }
}

TEST_CASE("seed quality stays in the pinned band") {
  const auto fx = read_fixture(fs::path(CRISPDEC_FIXTURE_DIR) / "seed_quality.txt");
  SceneSpec spec;
  spec.seed = static_cast<uint64_t>(fx.at("seed"));
  Dataset d = generate_dataset(spec, CorruptionSpec{}, static_cast<int64_t>(fx.at("scenes")));
  const double q = seed_quality(d).miou;
  CHECK(q >= fx.at("low"));
  CHECK(q <= fx.at("high"));
}

TEST_CASE("dataset round trip and hash") {
  const fs::path root = fs::temp_directory_path() / "crispdec_test_synth";
  fs::remove_all(root);
  SceneSpec spec;
  spec.seed = 8;
  Dataset d = generate_dataset(spec, CorruptionSpec{}, 6, 10);
  CHECK(d.names.front() == "scene_000010");
  save_dataset(root / "a", d);
  save_dataset(root / "b", generate_dataset(spec, CorruptionSpec{}, 6, 10));
  CHECK(dataset_hash(root / "a") == dataset_hash(root / "b"));
  CHECK(dataset_hash(root / "a").size() == 16);

  Dataset back = load_dataset(root / "a");
  REQUIRE(back.size() == 6);
  CHECK(back.names == d.names);
  CHECK(back.num_classes == 4);
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(back.gt[i] == d.gt[i]);
    CHECK(back.seeds[i] == d.seeds[i]);
    CHECK(testutil::max_abs_diff(back.images[i].data(), d.images[i].data()) < 1e-7);  // stored as float32
  }
  int64_t listed = 0;
  for (const auto& e : fs::directory_iterator(root / "a" / "gt")) listed += e.path().extension() == ".pgm";
  CHECK(listed == 6);

  spec.seed = 9;
  save_dataset(root / "c", generate_dataset(spec, CorruptionSpec{}, 6, 10));
  CHECK(dataset_hash(root / "c") != dataset_hash(root / "a"));

  save_dataset(root / "empty", generate_dataset(spec, CorruptionSpec{}, 0));
  CHECK(load_dataset(root / "empty").size() == 0);
  fs::remove_all(root);
}

TEST_CASE("toy encoder") {
  std::mt19937_64 rng(6);
  EncoderParams p = EncoderParams::init({8, 16, 24, 32}, rng);
  Tensor img = testutil::random_tensor({1, 3, 64, 64}, rng, 0, 1);
  FeaturePyramid f = toy_encoder_forward(img, p);
  CHECK(f.levels[0].shape() == Shape{1, 8, 16, 16});
  CHECK(f.levels[1].shape() == Shape{1, 16, 8, 8});
  CHECK(f.levels[2].shape() == Shape{1, 24, 4, 4});
  CHECK(f.levels[3].shape() == Shape{1, 32, 2, 2});

  FeaturePyramid z = toy_encoder_forward(img, EncoderParams::zeros({8, 16, 24, 32}));
  for (const Tensor& t : z.levels)
    for (double v : t.data()) CHECK(v == 0.0);

  CHECK_THROWS(toy_encoder_forward(testutil::random_tensor({1, 3, 48, 64}, rng), p));
}
