#include "gridadv/core.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace gridadv {

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

namespace {
constexpr char kMagic[4] = {'G', 'A', 'T', 'F'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_tensor_f32(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(kMagic, 4);
  std::uint32_t v = kVersion;
  f.write(reinterpret_cast<const char*>(&v), 4);
  std::uint32_t ndim = static_cast<std::uint32_t>(t.shape.size());
  f.write(reinterpret_cast<const char*>(&ndim), 4);
  for (int d : t.shape) {
    std::uint32_t u = static_cast<std::uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&u), 4);
  }
  std::vector<float> payload(t.data.begin(), t.data.end());
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path);
}

Tensor load_tensor_f32(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad tensor file magic: " + path);
  std::uint32_t v = 0, ndim = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  f.read(reinterpret_cast<char*>(&ndim), 4);
  if (!f || v != kVersion || ndim == 0 || ndim > 4) throw IoError("bad tensor header: " + path);
  std::vector<int> shape(ndim);
  for (auto& d : shape) {
    std::uint32_t u = 0;
    f.read(reinterpret_cast<char*>(&u), 4);
    d = static_cast<int>(u);
  }
  Tensor t(shape);
  std::vector<float> payload(t.numel());
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw IoError("truncated tensor file: " + path);
  for (std::size_t i = 0; i < payload.size(); ++i) t.data[i] = payload[i];
  return t;
}

}  // namespace gridadv
