#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "crispdec/tensor.hpp"

namespace crispdec {

/// A trainable tensor as it appears in checkpoints, the optimizer and the
/// EMA teacher. `role` groups tensors ("encoder", "decoder.dmf", ...).
struct NamedParam {
  std::string name;
  Tensor tensor;
  std::string role;

  bool is_encoder() const { return role.rfind("encoder", 0) == 0; }
};

using ParamList = std::vector<NamedParam>;

struct ConvParams {
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]

  static ConvParams make(int64_t cout, int64_t cin, int64_t k, double init_std,
                         std::mt19937_64& rng);
  static ConvParams zeros(int64_t cout, int64_t cin, int64_t k);
  void append_to(ParamList& out, const std::string& prefix, const std::string& role) const;
};

/// Writes one CTSR file per tensor plus `manifest.txt` ("name shape role"
/// per line). Float32 payloads make a save/load/save cycle byte-identical.
void save_checkpoint(const std::filesystem::path& dir, const ParamList& params);

/// Reads a checkpoint directory and copies every tensor into the matching
/// entry of `params` (by name). Names and shapes must agree exactly.
void load_checkpoint(const std::filesystem::path& dir, ParamList& params);

/// Deep copy; the copies are independent leaves with requires_grad set.
ParamList clone_params(const ParamList& params);

}  // namespace crispdec
