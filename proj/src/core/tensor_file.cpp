#include "patchguard/core/tensor_file.hpp"

#include <cstring>
#include <fstream>

#include "patchguard/core/errors.hpp"

namespace patchguard {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'G', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

void fnv(std::uint64_t& h, const void* data, std::size_t n) { h = fnv1a(data, n, h); }

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  json index{{"tensors", json::object()}, {"meta", file.meta}};
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    index["tensors"][name] = {{"shape", t.shape}, {"dtype", "float32"}, {"offset", offset}};
    offset += t.numel() * sizeof(float);
  }
  const std::string index_text = index.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t index_len = index_text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  out.write(reinterpret_cast<const char*>(&index_len), sizeof(index_len));
  out.write(index_text.data(), static_cast<std::streamsize>(index_text.size()));
  for (const auto& [name, t] : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a tensor container");
  std::uint32_t version = 0;
  std::uint64_t index_len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&index_len, bytes.data() + 8, 8);
  if (version != kVersion) throw FormatError("unsupported tensor container version");
  if (16 + index_len > bytes.size()) throw FormatError("truncated tensor index");
  json index;
  try {
    index = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(index_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad tensor index: ") + e.what());
  }
  const std::size_t payload = 16 + index_len;
  TensorFile file;
  file.meta = index.value("meta", json::object());
  for (const auto& [name, entry] : index.at("tensors").items()) {
    if (entry.at("dtype") != "float32") throw FormatError("unsupported dtype for " + name);
    Tensor<float> t(entry.at("shape").get<std::vector<std::size_t>>());
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t nbytes = t.numel() * sizeof(float);
    if (payload + offset + nbytes > bytes.size()) throw FormatError("tensor " + name + " exceeds payload");
    std::memcpy(t.data.data(), bytes.data() + payload + offset, nbytes);
    file.tensors.emplace(name, std::move(t));
  }
  return file;
}

std::uint64_t hash_tensors(const NamedTensors& tensors) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& [name, t] : tensors) {
    fnv(h, name.data(), name.size());
    for (auto d : t.shape) {
      const std::uint64_t v = d;
      fnv(h, &v, sizeof(v));
    }
    fnv(h, t.data.data(), t.numel() * sizeof(float));
  }
  return h;
}

}  // namespace patchguard
