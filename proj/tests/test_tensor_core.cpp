#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "crispdec/check.hpp"
#include "crispdec/ctsr.hpp"
#include "crispdec/gradcheck.hpp"
#include "crispdec/ops.hpp"
#include "crispdec/tensor.hpp"
#include "test_util.hpp"

using namespace crispdec;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Scalar half-pixel bilinear sample, written independently of the op.
double bilinear_ref(const std::vector<double>& src, int h, int w, int th, int tw, int oy,
                    int ox) {
  auto coord = [](int o, int in, int out, int& i0, int& i1, double& f) {
    double c = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    if (c < 0) c = 0;
    i0 = static_cast<int>(std::floor(c));
    if (i0 > in - 1) i0 = in - 1;
    i1 = std::min(i0 + 1, in - 1);
    f = c - i0;
  };
  int y0, y1, x0, x1;
  double fy, fx;
  coord(oy, h, th, y0, y1, fy);
  coord(ox, w, tw, x0, x1, fx);
  const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
  const double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t = Tensor::zeros({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.data().size() == 120);
  CHECK(t.rank() == 4);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("bilinear upsample") {
  SUBCASE("constant map stays constant") {
    Tensor t = Tensor::full({1, 2, 3, 5}, 3.0);
    Tensor u = bilinear_upsample(t, 7, 11);
    for (double v : u.data()) CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
  }
  SUBCASE("single source pixel broadcasts") {
    Tensor u = bilinear_upsample(Tensor::from_data({1, 1, 1, 1}, {2.5}), 4, 4);
    for (double v : u.data()) CHECK(v == 2.5);
  }
  SUBCASE("2x2 to 4x4 matches scalar interpolation") {
    const std::vector<double> src{0, 1, 2, 3};
    Tensor u = bilinear_upsample(Tensor::from_data({1, 1, 2, 2}, src), 4, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        CHECK(u.at(0, 0, y, x) == doctest::Approx(bilinear_ref(src, 2, 2, 4, 4, y, x)));
    // Half-pixel corners clamp to the source corners.
    CHECK(u.at(0, 0, 0, 0) == 0.0);
    CHECK(u.at(0, 0, 3, 3) == 3.0);
    CHECK(u.at(0, 0, 0, 1) == doctest::Approx(0.25));
  }
  SUBCASE("random non-square sizes") {
    std::mt19937_64 rng(11);
    Tensor t = random_tensor({1, 1, 3, 4}, rng);
    std::vector<double> src(t.data().begin(), t.data().end());
    Tensor u = bilinear_upsample(t, 9, 13);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 13; ++x)
        CHECK(u.at(0, 0, y, x) == doctest::Approx(bilinear_ref(src, 3, 4, 9, 13, y, x)));
  }
  SUBCASE("downsampling and empty maps are rejected") {
    CHECK_THROWS(bilinear_upsample(Tensor::zeros({1, 1, 4, 4}), 2, 4));
    CHECK_THROWS(bilinear_upsample(Tensor::zeros({1, 1, 0, 4}), 4, 4));
  }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel") {
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    std::vector<double> k(9, 0.0);
    for (int i = 0; i < 3; ++i) k[i * 3 + i] = 1.0;
    Tensor y = conv2d(x, Tensor::from_data({3, 3, 1, 1}, k), Tensor::zeros({3}));
    CHECK(max_abs_diff(x.data(), y.data()) == 0.0);
  }
  SUBCASE("3x3 ones kernel on an impulse") {
    std::vector<double> img(25, 0.0);
    img[12] = 1.0;
    Tensor y = conv2d(Tensor::from_data({1, 1, 5, 5}, img), Tensor::full({1, 1, 3, 3}, 1.0),
                      Tensor());
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 5; ++xx) {
        const bool inside = std::abs(yy - 2) <= 1 && std::abs(xx - 2) <= 1;
        CHECK(y.at(0, 0, yy, xx) == (inside ? 1.0 : 0.0));
      }
  }
  SUBCASE("matches a direct loop reference, stride 1 and 2") {
    std::mt19937_64 rng(2);
    Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    for (int stride : {1, 2}) {
      Tensor y = conv2d(x, k, b, {stride, -1});
      const int ho = (5 + 2 - 3) / stride + 1;
      REQUIRE(y.dim(2) == ho);
      for (int n = 0; n < 2; ++n)
        for (int co = 0; co < 4; ++co)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < ho; ++ox) {
              double acc = b.data()[co];
              for (int ci = 0; ci < 3; ++ci)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                    if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                    acc += x.at(n, ci, iy, ix) * k.data()[((co * 3 + ci) * 3 + ky) * 3 + kx];
                  }
              CHECK(y.at(n, co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
            }
    }
  }
  SUBCASE("channel mismatch is rejected") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 1, 1}), Tensor()),
                    ShapeError);
  }
}

TEST_CASE("elementwise closed forms") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(std::abs(softplus(Tensor::scalar(50.0)).item() - 50.0) < 1e-9);
  CHECK(std::isfinite(softplus(Tensor::scalar(1000.0)).item()));
  CHECK(relu(Tensor::from_data({3}, {-1, 0, 2})).data()[2] == 2.0);
  CHECK_THROWS_AS(log(Tensor::from_data({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::from_data({1}, {-2.0})), DomainError);
  CHECK(neg(Tensor::scalar(2.0)).item() == -2.0);
}

TEST_CASE("softmax") {
  Tensor s = softmax(Tensor::zeros({1, 4, 1, 1}), 1);
  for (double v : s.data()) CHECK(v == 0.25);

  Tensor p = softmax(Tensor::from_data({2}, {0.0, std::numbers::ln2}), 0);
  CHECK(p.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(p.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));

  std::mt19937_64 rng(3);
  Tensor v = random_tensor({7}, rng, -3, 3);
  Tensor sv = softmax(v, 0);
  double z = 0;
  for (double x : v.data()) z += std::exp(x);
  for (int i = 0; i < 7; ++i) CHECK(std::abs(sv.data()[i] - std::exp(v.data()[i]) / z) < 1e-12);

  Tensor big = Tensor::from_data({1, 3, 1, 2}, {1e4, -1e4, 0, 5e3, -1e4, 1e4});
  Tensor sb = softmax(big, 1);
  for (int x = 0; x < 2; ++x) {
    double total = 0;
    for (int c = 0; c < 3; ++c) total += sb.at(0, c, 0, x);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  Tensor ls = log_softmax(v, 0);
  for (int i = 0; i < 7; ++i) CHECK(std::abs(std::exp(ls.data()[i]) - sv.data()[i]) < 1e-12);
}

TEST_CASE("backward basics") {
  Tensor t = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  sum(t).backward();
  for (double g : t.grad()) CHECK(g == 1.0);

  t.zero_grad();
  sum(mul(t, t)).backward();
  CHECK(t.grad()[0] == 2.0);
  CHECK(t.grad()[1] == -4.0);
  CHECK(t.grad()[2] == 1.0);

  // Repeated calls accumulate.
  sum(t).backward();
  CHECK(t.grad()[0] == 3.0);

  CHECK_THROWS(mul_scalar(t, 2.0).backward());
}

TEST_CASE("no-grad guard and detach stop recording") {
  Tensor t = Tensor::from_data({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    Tensor y = mul(t, t);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor d = t.detach();
  CHECK_FALSE(d.requires_grad());
  Tensor y = add(mul(t, d), t);
  sum(y).backward();
  CHECK(t.grad()[0] == 2.0);  // d/dt (t * const + t) = const + 1
  CHECK(t.grad()[1] == 3.0);
}

TEST_CASE("replay determinism") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({1, 3, 6, 6}, rng);
  Tensor k = random_tensor({2, 3, 3, 3}, rng);
  auto f = [&] { return softmax(bilinear_upsample(conv2d(x, k, Tensor()), 12, 12), 1); };
  Tensor a = f(), b = f();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("finite differences") {
  std::mt19937_64 rng(5);
  Tensor t = random_tensor({2, 3}, rng);
  Tensor g = finite_diff_grad([](const Tensor& x) { return sum(x); }, t);
  for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));

  Tensor z = Tensor::zeros({4});
  Tensor gs = finite_diff_grad([](const Tensor& x) { return sum(sigmoid(x)); }, z);
  for (double v : gs.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-7));

  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 1e-12) == doctest::Approx(1e-4));  // floored denominator
}

TEST_CASE("masked cross entropy gradient agrees with finite differences") {
  // 3x3 toy logits, K = 2, some pixels excluded.
  std::mt19937_64 rng(6);
  Tensor logits = random_tensor({1, 2, 3, 3}, rng, -2, 2, true);
  const std::vector<int> labels{0, 1, 1, 0, 0, 1, 1, 1, 0};
  const std::vector<int> valid{1, 1, 0, 1, 1, 1, 0, 1, 1};
  auto loss = [&](const Tensor& z) {
    Tensor ls = log_softmax(z, 1);
    std::vector<double> pick(18, 0.0);
    double count = 0;
    for (int i = 0; i < 9; ++i)
      if (valid[i]) {
        pick[labels[i] * 9 + i] = -1.0;
        count += 1;
      }
    return mul_scalar(sum(mul(ls, Tensor::from_data({1, 2, 3, 3}, pick))), 1.0 / count);
  };
  loss(logits).backward();
  Tensor fd = finite_diff_grad(loss, logits);
  const auto g = logits.grad();
  for (size_t i = 0; i < g.size(); ++i) CHECK(relative_error(g[i], fd.data()[i]) < 1e-4);
}

TEST_CASE("primitive gradient checks") {
  std::mt19937_64 rng(7);
  auto check = [](const std::function<Tensor()>& f, std::vector<Tensor> ps) {
    std::vector<std::string> names(ps.size(), "p");
    for (const auto& r : check_gradients(f, ps, names, {1e-5, 1e-8, 0, 1}))
      CHECK(r.max_rel_error < 1e-4);
  };
  Tensor a = random_tensor({1, 3, 4, 4}, rng, 0.2, 1.5, true);
  Tensor b = random_tensor({1, 3, 4, 4}, rng, -1, 1, true);
  Tensor w = random_tensor({1, 3, 4, 4}, rng);
  auto weighted = [&](const Tensor& t) { return sum(mul(t, w)); };
  check([&] { return weighted(mul(a, b)); }, {a, b});
  check([&] { return weighted(sub(add(a, b), neg(b))); }, {a, b});
  check([&] { return weighted(log(a)); }, {a});
  check([&] { return weighted(exp(b)); }, {b});
  check([&] { return weighted(softplus(b)); }, {b});
  check([&] { return weighted(sigmoid(b)); }, {b});
  check([&] { return weighted(softmax(b, 1)); }, {b});
  check([&] { return weighted(log_softmax(b, 1)); }, {b});
  Tensor k = random_tensor({3, 3, 3, 3}, rng, -1, 1, true);
  Tensor bias = random_tensor({3}, rng, -1, 1, true);
  check([&] { return weighted(conv2d(b, k, bias)); }, {b, k, bias});
  Tensor w8 = random_tensor({1, 3, 8, 8}, rng);
  check([&] { return sum(mul(bilinear_upsample(b, 8, 8), w8)); }, {b});
  Tensor gamma = random_tensor({3}, rng, 0.5, 1.5, true);
  Tensor beta = random_tensor({3}, rng, -1, 1, true);
  check([&] { return weighted(layer_norm_channels(b, gamma, beta)); }, {b, gamma, beta});
}

TEST_CASE("gradient suite") {
  const GradCheckSuite suite = builtin_gradcheck_suite();
  CHECK(suite.size() > 20);
  const auto report = suite.run(1e-4);
  for (const auto& op : report.ops) {
    INFO(op.op << " " << op.worst_rel_error << " " << op.error);
    CHECK(op.passed);
  }
  CHECK(report.passed);

  GradCheckSuite empty;
  CHECK_FALSE(empty.run().passed);

  // A deliberately wrong backward is caught and named.
  GradCheckSuite broken;
  broken.add("broken_square", [] {
    Tensor x = Tensor::from_data({3}, {0.3, -0.7, 1.1}, true);
    auto f = [&] {
      auto v = std::vector<double>(x.data().begin(), x.data().end());
      for (double& e : v) e *= e;
      return sum(make_op_result("broken_square", {3}, v, {x}, [x](detail::Node& self) {
        auto& g = x.node()->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.data()[i];  // missing 2x
      }));
    };
    return check_gradients(f, {x}, {"x"});
  });
  const auto r = broken.run(1e-4);
  CHECK_FALSE(r.passed);
  REQUIRE(r.ops.size() == 1);
  CHECK(r.ops[0].op == "broken_square");
  CHECK_FALSE(r.ops[0].passed);
}

TEST_CASE("ctsr round trip") {
  std::mt19937_64 rng(8);
  Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_ctsr(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "CTSR");
  CHECK(bytes.size() == 4 + 4 + 4 + 3 * 8 + 24 * 4);
  Tensor back = read_ctsr(ss);
  CHECK(back.shape() == t.shape());
  for (int64_t i = 0; i < t.numel(); ++i)
    CHECK(back.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
  std::stringstream again;
  write_ctsr(again, back);
  CHECK(again.str() == bytes);

  std::stringstream bad("CTSX");
  CHECK_THROWS(read_ctsr(bad));
}
