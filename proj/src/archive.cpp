#include "vltd/archive.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vltd {
namespace {

constexpr char kMagic[8] = {'V', 'L', 'T', 'D', 'A', 'R', 'C', '1'};

}  // namespace

void write_archive(const std::string& path, const nlohmann::json& meta, const ParamList& tensors) {
  nlohmann::json header{{"meta", meta}, {"tensors", nlohmann::json::array()}};
  for (const auto& p : tensors) header["tensors"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : tensors) {
    const auto& v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error(path + ": not a vltd archive");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Archive a;
  const auto header = nlohmann::json::parse(text);
  a.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated tensor data");
    a.tensors.emplace(t.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(v)));
  }
  return a;
}

void load_params(const ParamList& params, const Archive& archive, bool strict) {
  for (const auto& p : params) {
    const auto it = archive.tensors.find(p.name);
    if (it == archive.tensors.end()) {
      if (strict) throw std::runtime_error("archive is missing tensor '" + p.name + "'");
      continue;
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw std::runtime_error(fmt::format("tensor '{}' has shape {} in the archive, expected {}", p.name,
                                           shape_str(it->second.shape()), shape_str(p.tensor.shape())));
    }
    Tensor dst = p.tensor;
    dst.values() = it->second.values();
  }
}

uint64_t fnv1a(const void* data, size_t size, uint64_t seed) {
  uint64_t h = seed;
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fingerprint(const ParamList& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    h = fnv1a(p.name.data(), p.name.size(), h);
    const auto& shape = p.tensor.shape();
    h = fnv1a(shape.data(), shape.size() * sizeof(int64_t), h);
    const auto& v = p.tensor.values();
    h = fnv1a(v.data(), v.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace vltd
