#include "crispdec/ctsr.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "crispdec/check.hpp"

namespace crispdec {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw std::runtime_error("CTSR: truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void write_ctsr(std::ostream& os, const Tensor& t) {
  os.write("CTSR", 4);
  put_le<uint32_t>(os, kCtsrVersion);
  put_le<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (int64_t e : t.shape()) put_le<uint64_t>(os, static_cast<uint64_t>(e));
  for (double v : t.data()) put_le<float>(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("CTSR: write failed");
}

Tensor read_ctsr(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CTSR", 4) != 0)
    throw std::runtime_error("CTSR: bad magic");
  const auto version = get_le<uint32_t>(is);
  if (version != kCtsrVersion)
    throw std::runtime_error("CTSR: unsupported version " + std::to_string(version));
  const auto rank = get_le<uint32_t>(is);
  if (rank > 16) throw std::runtime_error("CTSR: implausible rank");
  Shape shape(rank);
  for (auto& e : shape) {
    const auto v = get_le<uint64_t>(is);
    if (v > (uint64_t{1} << 40)) throw std::runtime_error("CTSR: implausible extent");
    e = static_cast<int64_t>(v);
  }
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = get_le<float>(is);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_ctsr(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_ctsr(os, t);
}

Tensor load_ctsr(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_ctsr(is);
}

}  // namespace crispdec
