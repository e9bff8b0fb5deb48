#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "vltd/nn.hpp"

namespace vltd {

// Binary container: 8-byte magic, u64 header length, JSON header, then the
// raw little-endian doubles of every tensor in header order.
struct Archive {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

void write_archive(const std::string& path, const nlohmann::json& meta, const ParamList& tensors);
Archive read_archive(const std::string& path);

// Copies archive tensors into matching params (name and shape must agree).
// Params absent from the archive are an error when strict.
void load_params(const ParamList& params, const Archive& archive, bool strict = true);

uint64_t fnv1a(const void* data, size_t size, uint64_t seed = 0xcbf29ce484222325ULL);
// Hash over names, shapes and value bits.
uint64_t fingerprint(const ParamList& params);

}  // namespace vltd
