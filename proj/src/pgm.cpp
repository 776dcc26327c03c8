#include "crispdec/pgm.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

namespace crispdec {

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string token;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

int64_t header_int(std::istream& is, const std::filesystem::path& path, const char* field) {
  const std::string token = header_token(is);
  try {
    size_t used = 0;
    const long long v = std::stoll(token, &used);
    if (used == token.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw std::runtime_error(path.string() + ": bad PGM " + field + " '" + token + "'");
}

}  // namespace

LabelMap read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (header_token(is) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM");
  const int64_t w = header_int(is, path, "width");
  const int64_t h = header_int(is, path, "height");
  const int64_t maxval = header_int(is, path, "maxval");
  if (maxval != 255) throw std::runtime_error(path.string() + ": PGM maxval must be 255");
  if (w > (1 << 16) || h > (1 << 16)) throw std::runtime_error(path.string() + ": PGM too large");
  std::vector<unsigned char> raw(static_cast<size_t>(w * h));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (is.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error(path.string() + ": truncated PGM payload");
  LabelMap out(h, w);
  for (size_t i = 0; i < raw.size(); ++i) out.data[i] = raw[i];
  return out;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << labels.w << ' ' << labels.h << "\n255\n";
  std::vector<unsigned char> raw(labels.data.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const int32_t v = labels.data[i];
    if (v < 0 || v > 255) throw std::invalid_argument("label value does not fit in a PGM byte");
    raw[i] = static_cast<unsigned char>(v);
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace crispdec
