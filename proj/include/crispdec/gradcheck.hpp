#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crispdec/tensor.hpp"

namespace crispdec {

/// Central-difference estimate of d f(t) / d t. f must return a scalar tensor
/// and be deterministic; it is evaluated with graph recording off.
Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& t,
                        double h = 1e-4);

/// Same estimate for a tensor captured by `f`: perturbs `param` in place and
/// restores it afterwards. Only the coordinates in `indices` are estimated
/// (all when empty); other entries of the result are zero.
std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& param,
                                             double h = 1e-4,
                                             const std::vector<int64_t>& indices = {});

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  int64_t worst_index = -1;
  double worst_analytic = 0;
  double worst_numeric = 0;
  int64_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  double floor = 1e-8;
  /// Per-tensor cap on checked coordinates; 0 checks every coordinate.
  int64_t max_coords = 0;
  uint64_t seed = 7;  // picks the subset when max_coords caps the check
};

/// Backpropagates loss() once, then compares every tracked tensor in
/// `params` against central differences. One result per tensor.
std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss,
                                             std::vector<Tensor> params,
                                             const std::vector<std::string>& names,
                                             const GradCheckOptions& options = {});

/// Named collection of gradient checks; the CLI's gradcheck command runs one.
class GradCheckSuite {
 public:
  using Check = std::function<std::vector<GradCheckResult>()>;

  void add(std::string op, Check check);
  bool empty() const { return checks_.empty(); }
  size_t size() const { return checks_.size(); }

  struct OpReport {
    std::string op;
    double worst_rel_error = 0;
    std::string worst_tensor;
    bool passed = false;
    std::string error;  // exception text if the check threw
  };
  struct Report {
    std::vector<OpReport> ops;
    bool passed = false;
  };

  /// Runs every check. An empty suite fails.
  Report run(double tolerance = 1e-4) const;

 private:
  std::vector<std::pair<std::string, Check>> checks_;
};

/// Every differentiable primitive, decoder stage, loss term and the encoder.
GradCheckSuite builtin_gradcheck_suite();

}  // namespace crispdec
