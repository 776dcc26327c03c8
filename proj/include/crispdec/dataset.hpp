#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crispdec/label_map.hpp"
#include "crispdec/tensor.hpp"

namespace crispdec {

/// Images with ground truth and initial (corrupted) seeds.
///
/// On disk: images/<name>.ctsr ([3,H,W]), gt/<name>.pgm, seeds/<name>.pgm,
/// seed_uncertainty/<name>.ctsr ([H,W]) and manifest.txt, which starts with
/// "key value" header lines and then lists one "name" line per sample under
/// a "samples" line.
struct Dataset {
  int64_t h = 0, w = 0, num_classes = 0;
  uint64_t generator_seed = 0;
  std::vector<std::string> names;
  std::vector<Tensor> images;  // [3,H,W] each
  std::vector<LabelMap> gt;
  std::vector<LabelMap> seeds;
  std::vector<std::vector<double>> seed_uncertainty;

  int64_t size() const { return static_cast<int64_t>(names.size()); }
  /// Stacks the images of the given indices into [n,3,H,W].
  Tensor batch_images(const std::vector<int64_t>& indices) const;
  void validate() const;
};

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

/// FNV-1a 64 over the manifest and every listed file in manifest order,
/// printed as 16 hex digits.
std::string dataset_hash(const std::filesystem::path& dir);

/// FNV-1a 64 of a byte string, continuing from `state`.
uint64_t fnv1a(const void* data, size_t size, uint64_t state = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

}  // namespace crispdec
