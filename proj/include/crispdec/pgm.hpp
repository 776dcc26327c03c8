#pragma once

#include <filesystem>

#include "crispdec/label_map.hpp"

namespace crispdec {

/// Binary 8-bit PGM (P5, maxval 255). Pixel value = class index, 255 = IGNORE.
/// Comment lines in the header are accepted on read.
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace crispdec
