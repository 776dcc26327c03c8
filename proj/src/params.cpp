#include "crispdec/params.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "crispdec/check.hpp"
#include "crispdec/ctsr.hpp"

namespace crispdec {

ConvParams ConvParams::make(int64_t cout, int64_t cin, int64_t k, double init_std,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, init_std);
  std::vector<double> w(cout * cin * k * k);
  for (auto& v : w) v = normal(rng);
  return {Tensor::from_data({cout, cin, k, k}, std::move(w), true),
          Tensor::zeros({cout}, true)};
}

ConvParams ConvParams::zeros(int64_t cout, int64_t cin, int64_t k) {
  return {Tensor::zeros({cout, cin, k, k}, true), Tensor::zeros({cout}, true)};
}

void ConvParams::append_to(ParamList& out, const std::string& prefix,
                           const std::string& role) const {
  out.push_back({prefix + ".weight", weight, role});
  out.push_back({prefix + ".bias", bias, role});
}

void save_checkpoint(const std::filesystem::path& dir, const ParamList& params) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& p : params) {
    save_ctsr(dir / (p.name + ".ctsr"), p.tensor);
    manifest << p.name << ' ' << shape_to_string(p.tensor.shape()) << ' ' << p.role << '\n';
  }
}

void load_checkpoint(const std::filesystem::path& dir, ParamList& params) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("missing manifest.txt in " + dir.string());
  std::map<std::string, std::string> listed;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape, role;
    ls >> name >> shape >> role;
    listed[name] = shape;
  }
  require(listed.size() == params.size(),
          "checkpoint lists " + std::to_string(listed.size()) + " tensors, model has " +
              std::to_string(params.size()));
  for (auto& p : params) {
    auto it = listed.find(p.name);
    require(it != listed.end(), "checkpoint is missing tensor " + p.name);
    require(it->second == shape_to_string(p.tensor.shape()),
            "shape mismatch for " + p.name + ": " + it->second + " vs " +
                shape_to_string(p.tensor.shape()));
    Tensor loaded = load_ctsr(dir / (p.name + ".ctsr"));
    require(loaded.shape() == p.tensor.shape(), "stored tensor shape mismatch for " + p.name);
    auto src = loaded.data();
    auto dst = p.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

ParamList clone_params(const ParamList& params) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) {
    Tensor t = p.tensor.detach();
    t.set_requires_grad(true);
    out.push_back({p.name, t, p.role});
  }
  return out;
}

}  // namespace crispdec
