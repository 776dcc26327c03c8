#include "crispdec/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "crispdec/check.hpp"
#include "crispdec/ctsr.hpp"
#include "crispdec/pgm.hpp"

namespace crispdec {

namespace fs = std::filesystem;

namespace {

const char* const kSubdirs[] = {"images", "gt", "seeds", "seed_uncertainty"};

std::vector<fs::path> sample_files(const fs::path& dir, const std::string& name) {
  return {dir / "images" / (name + ".ctsr"), dir / "gt" / (name + ".pgm"),
          dir / "seeds" / (name + ".pgm"), dir / "seed_uncertainty" / (name + ".ctsr")};
}

}  // namespace

Tensor Dataset::batch_images(const std::vector<int64_t>& indices) const {
  const int64_t n = static_cast<int64_t>(indices.size()), plane = 3 * h * w;
  std::vector<double> out(n * plane);
  for (int64_t i = 0; i < n; ++i) {
    auto src = images.at(indices[i]).data();
    std::copy(src.begin(), src.end(), out.begin() + i * plane);
  }
  return Tensor::from_data({n, 3, h, w}, std::move(out));
}

void Dataset::validate() const {
  const size_t n = names.size();
  require(images.size() == n && gt.size() == n && seeds.size() == n &&
              seed_uncertainty.size() == n,
          "dataset: per-sample arrays differ in length");
  for (size_t i = 0; i < n; ++i) {
    require_shape(images[i].shape() == Shape{3, h, w}, "dataset: image " + names[i] + " has shape " +
                                                          shape_to_string(images[i].shape()));
    require_shape(gt[i].h == h && gt[i].w == w && seeds[i].h == h && seeds[i].w == w,
                  "dataset: label map size mismatch for " + names[i]);
    require_shape(static_cast<int64_t>(seed_uncertainty[i].size()) == h * w,
                  "dataset: uncertainty size mismatch for " + names[i]);
  }
}

void save_dataset(const fs::path& dir, const Dataset& data) {
  data.validate();
  for (const char* sub : kSubdirs) fs::create_directories(dir / sub);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  manifest << "format crispdec-dataset-1\n"
           << "height " << data.h << "\nwidth " << data.w << "\nclasses " << data.num_classes
           << "\nseed " << data.generator_seed << "\ncount " << data.size() << "\nsamples\n";
  for (int64_t i = 0; i < data.size(); ++i) {
    const std::string& name = data.names[i];
    const auto files = sample_files(dir, name);
    save_ctsr(files[0], data.images[i]);
    write_pgm(files[1], data.gt[i]);
    write_pgm(files[2], data.seeds[i]);
    save_ctsr(files[3], Tensor::from_data({data.h, data.w}, data.seed_uncertainty[i]));
    manifest << name << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing the dataset manifest");
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("no dataset manifest in " + dir.string());
  Dataset data;
  std::string line;
  int64_t count = -1;
  bool in_samples = false;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (in_samples) {
      data.names.push_back(line);
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "samples") {
      in_samples = true;
    } else if (key == "format") {
      std::string v;
      ls >> v;
      require(v == "crispdec-dataset-1", "unsupported dataset format '" + v + "'");
    } else if (key == "height") {
      ls >> data.h;
    } else if (key == "width") {
      ls >> data.w;
    } else if (key == "classes") {
      ls >> data.num_classes;
    } else if (key == "seed") {
      ls >> data.generator_seed;
    } else if (key == "count") {
      ls >> count;
    } else {
      throw std::runtime_error("dataset manifest: unknown key '" + key + "'");
    }
  }
  require(count == static_cast<int64_t>(data.names.size()),
          "dataset manifest: count does not match the sample list");
  for (const std::string& name : data.names) {
    const auto files = sample_files(dir, name);
    data.images.push_back(load_ctsr(files[0]));
    data.gt.push_back(read_pgm(files[1]));
    data.seeds.push_back(read_pgm(files[2]));
    Tensor u = load_ctsr(files[3]);
    data.seed_uncertainty.emplace_back(u.data().begin(), u.data().end());
  }
  data.validate();
  return data;
}

uint64_t fnv1a(const void* data, size_t size, uint64_t state) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    state ^= p[i];
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string dataset_hash(const fs::path& dir) {
  auto read_all = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  const std::string manifest = read_all(dir / "manifest.txt");
  uint64_t h = fnv1a(manifest.data(), manifest.size());
  std::istringstream ms(manifest);
  std::string line;
  bool in_samples = false;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    if (!in_samples) {
      in_samples = line == "samples";
      continue;
    }
    for (const fs::path& p : sample_files(dir, line)) {
      const std::string bytes = read_all(p);
      h = fnv1a(bytes.data(), bytes.size(), h);
    }
  }
  return hex64(h);
}

}  // namespace crispdec
