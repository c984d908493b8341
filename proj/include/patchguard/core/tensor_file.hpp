#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "patchguard/core/tensor.hpp"

namespace patchguard {

using NamedTensors = std::map<std::string, Tensor<float>>;

/// Tensor container layout (all integers little-endian):
///   "PGTW" | u32 version=1 | u64 index_len | index JSON | payload
/// The index is {"tensors": {name: {"shape": [...], "dtype": "float32",
/// "offset": n}}, "meta": {...}}; offsets are bytes from payload start.
struct TensorFile {
  NamedTensors tensors;
  nlohmann::json meta = nlohmann::json::object();
};

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path);
TensorFile load_tensor_file(const std::filesystem::path& path);

inline constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ull;

/// Incremental FNV-1a: pass the previous result as `h` to continue.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset);

/// FNV-1a over names, shapes and raw float bytes; stable across runs.
std::uint64_t hash_tensors(const NamedTensors& tensors);

}  // namespace patchguard
