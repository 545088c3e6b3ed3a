#include "igam/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace igam {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

constexpr uint16_t kFormatVersion = 1;

void write_u16(std::ostream& os, uint16_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

bool read_exact(std::istream& is, void* dst, size_t n) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<size_t>(is.gcount()) == n;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write("IGAM", 4);
  write_u16(os, kFormatVersion);
  for (const auto& [name, t] : tensors) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * t.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!read_exact(is, magic, 4) || std::memcmp(magic, "IGAM", 4) != 0) {
    throw BadMagic(path);
  }
  uint16_t version = 0;
  if (!read_exact(is, &version, sizeof version) || version != kFormatVersion) {
    throw Truncated("bad or missing format version in " + path);
  }
  std::vector<std::pair<std::string, Tensor>> out;
  while (true) {
    uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
    if (is.gcount() == 0 && is.eof()) break;  // clean end of records
    if (static_cast<size_t>(is.gcount()) != sizeof name_len) {
      throw Truncated(path);
    }
    std::string name(name_len, '\0');
    if (!read_exact(is, name.data(), name_len)) throw Truncated(path);
    uint32_t rank = 0;
    if (!read_exact(is, &rank, sizeof rank)) throw Truncated(path);
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t dim = 0;
      if (!read_exact(is, &dim, sizeof dim)) throw Truncated(path);
      shape[d] = static_cast<int64_t>(dim);
      n *= shape[d];
    }
    std::vector<double> values(static_cast<size_t>(n));
    if (!read_exact(is, values.data(), sizeof(double) * static_cast<size_t>(n))) {
      throw Truncated(path);
    }
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::string& path, const Model& m) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const ParamRef& p : m.parameters()) tensors.emplace_back(p.name, p.tensor);
  save_tensors(path, tensors);
}

void load_checkpoint(const std::string& path, Model& m) {
  auto loaded = load_tensors(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : loaded) by_name.emplace(name, t);
  auto params = m.parameters();
  if (params.size() != by_name.size()) {
    throw CountMismatch("checkpoint has " + std::to_string(by_name.size()) +
                        " tensors, architecture expects " +
                        std::to_string(params.size()));
  }
  for (ParamRef& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CountMismatch("checkpoint missing tensor " + p.name);
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw ShapeMismatch("checkpoint tensor " + p.name + " has shape " +
                          shape_str(it->second.shape()) + ", expected " +
                          shape_str(p.tensor.shape()));
    }
    std::copy(it->second.data(), it->second.data() + it->second.size(),
              p.tensor.data());
  }
}

}  // namespace igam
