#include "crispdec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crispdec/check.hpp"

namespace crispdec {

Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& t, double h) {
  NoGradGuard no_grad;
  Tensor probe = t.detach();
  auto x = probe.mutable_data();
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = f(probe).item();
    x[i] = saved - h;
    const double minus = f(probe).item();
    x[i] = saved;
    g[i] = (plus - minus) / (2 * h);
  }
  return Tensor::from_data(t.shape(), std::move(g));
}

std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& param,
                                             double h, const std::vector<int64_t>& indices) {
  NoGradGuard no_grad;
  auto x = param.mutable_data();
  std::vector<double> g(x.size(), 0.0);
  auto estimate = [&](size_t i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = f();
    x[i] = saved - h;
    const double minus = f();
    x[i] = saved;
    g[i] = (plus - minus) / (2 * h);
  };
  if (indices.empty()) {
    for (size_t i = 0; i < x.size(); ++i) estimate(i);
  } else {
    for (int64_t i : indices) estimate(static_cast<size_t>(i));
  }
  return g;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss,
                                             std::vector<Tensor> params,
                                             const std::vector<std::string>& names,
                                             const GradCheckOptions& options) {
  require(names.size() == params.size(), "check_gradients: one name per tensor");
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  std::mt19937_64 rng(options.seed);
  std::vector<GradCheckResult> results;
  auto value = [&] { return loss().item(); };
  for (size_t k = 0; k < params.size(); ++k) {
    GradCheckResult r;
    r.name = names[k];
    std::vector<int64_t> idx;
    const int64_t n = params[k].numel();
    if (options.max_coords > 0 && n > options.max_coords) {
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_coords);
      std::sort(idx.begin(), idx.end());
    } else {
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), 0);
    }
    auto numeric = finite_diff_grad_inplace(value, params[k], options.step, idx);
    for (int64_t i : idx) {
      const double e = relative_error(analytic[k][i], numeric[i], options.floor);
      if (r.worst_index < 0 || e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst_index = i;
        r.worst_analytic = analytic[k][i];
        r.worst_numeric = numeric[i];
      }
    }
    r.checked = static_cast<int64_t>(idx.size());
    results.push_back(r);
  }
  return results;
}

void GradCheckSuite::add(std::string op, Check check) {
  checks_.emplace_back(std::move(op), std::move(check));
}

GradCheckSuite::Report GradCheckSuite::run(double tolerance) const {
  Report report;
  report.passed = !checks_.empty();
  for (const auto& [op, check] : checks_) {
    OpReport r;
    r.op = op;
    try {
      auto results = check();
      r.passed = !results.empty();
      for (const auto& res : results) {
        if (!std::isfinite(res.max_rel_error) || res.max_rel_error >= r.worst_rel_error) {
          r.worst_rel_error = res.max_rel_error;
          r.worst_tensor = res.name;
        }
        if (!(res.max_rel_error < tolerance)) r.passed = false;
      }
    } catch (const std::exception& e) {
      r.passed = false;
      r.error = e.what();
    }
    report.passed = report.passed && r.passed;
    report.ops.push_back(std::move(r));
  }
  return report;
}

}  // namespace crispdec
