#include "options.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/tensor_file.hpp"

namespace patchguard::cli {

nlohmann::json OptionRegistry::resolved(const CLI::App* root, const CLI::App* sub) const {
  nlohmann::json j = nlohmann::json::object();
  if (sub) j["command"] = sub->get_name();
  for (const auto* app : {root, sub}) {
    auto it = entries_.find(app);
    if (it == entries_.end()) continue;
    for (const auto& [name, get] : it->second) j[name] = get();
  }
  return j;
}

std::string JsonConfig::to_config(const CLI::App*, bool, bool, std::string) const {
  // run_config.json is produced from the registry instead; CLI11 only calls
  // this for --write-config style features we do not expose.
  return "{}";
}

std::vector<CLI::ConfigItem> JsonConfig::from_config(std::istream& input) const {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(input);
  } catch (const nlohmann::json::exception& e) {
    throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");

  const auto subs = root_->get_subcommands();
  const CLI::App* sub = subs.empty() ? nullptr : subs.front();

  std::vector<CLI::ConfigItem> items;
  for (const auto& [key, value] : j.items()) {
    if (key == "command") {
      if (!value.is_string() || !sub || value.get<std::string>() != sub->get_name())
        throw CLI::ConfigError("config was written for command '" + value.dump() + "'");
      continue;
    }
    if (value.is_null()) continue;
    CLI::ConfigItem item;
    item.name = key;
    if (!root_->get_option_no_throw("--" + key) && sub) item.parents = {sub->get_name()};
    auto as_input = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      for (const auto& v : value) item.inputs.push_back(as_input(v));
    } else {
      item.inputs.push_back(as_input(value));
    }
    items.push_back(std::move(item));
  }
  return items;
}

void write_run_config(const nlohmann::json& resolved, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << resolved.dump(2) << "\n";
}

namespace {

std::uint64_t hash_file(const std::filesystem::path& p, std::uint64_t h) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size(), h);
}

}  // namespace

std::uint64_t hash_outputs(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return hash_file(path, kFnvOffset);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(path))
    if (e.is_regular_file() && !e.path().filename().string().ends_with("run_config.json")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = kFnvOffset;
  for (const auto& f : files) {
    const auto rel = std::filesystem::relative(f, path).generic_string();
    h = fnv1a(rel.data(), rel.size(), h);
    h = hash_file(f, h);
  }
  return h;
}

}  // namespace patchguard::cli
