#include "dyco/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dyco {
namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(path + ": truncated reading " + what + " at offset " + std::to_string(is.tellg()));
  return v;
}

}  // namespace

void save_checkpoint(const ParamMap& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("DYTN", 4);
  put<uint32_t>(os, 1);
  put<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) put<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data->data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

ParamMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DYTN", 4) != 0)
    throw std::runtime_error(path + ": bad magic, expected \"DYTN\" at offset 0");
  uint32_t version = get<uint32_t>(is, path, "version");
  if (version != 1) throw std::runtime_error(path + ": unsupported DYTN version " + std::to_string(version));
  uint32_t count = get<uint32_t>(is, path, "tensor count");
  ParamMap out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = get<uint32_t>(is, path, "name length");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw std::runtime_error(path + ": truncated name at offset " + std::to_string(is.tellg()));
    uint32_t rank = get<uint32_t>(is, path, "rank");
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(get<uint64_t>(is, path, "dim"));
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error(path + ": truncated tensor data for \"" + name + "\"");
    out.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace dyco
