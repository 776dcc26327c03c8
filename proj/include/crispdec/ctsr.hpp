#pragma once

#include <filesystem>
#include <iosfwd>

#include "crispdec/tensor.hpp"

namespace crispdec {

// CTSR tensor files: "CTSR", u32 version (1), u32 rank, u64 extents[rank],
// then the values as little-endian IEEE-754 float32 in row-major order.
// Values are rounded to float32 on write, so a write/read/write cycle is
// byte-identical but a double tensor only survives to float precision.

inline constexpr uint32_t kCtsrVersion = 1;

void write_ctsr(std::ostream& os, const Tensor& t);
Tensor read_ctsr(std::istream& is);

void save_ctsr(const std::filesystem::path& path, const Tensor& t);
Tensor load_ctsr(const std::filesystem::path& path);

}  // namespace crispdec
