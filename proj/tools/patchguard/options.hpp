#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace patchguard::cli {

/// Remembers every bound variable per (sub)command so the resolved values can
/// be written back out under the same names the flags use.
class OptionRegistry {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
    auto* opt = app->add_option("--" + name, var, desc);
    record(app, name, [&var] { return nlohmann::json(var); });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& desc) {
    auto* opt = app->add_flag("--" + name, var, desc);
    record(app, name, [&var] { return nlohmann::json(var); });
    return opt;
  }

  /// Resolved values of the root options plus those of `sub`.
  nlohmann::json resolved(const CLI::App* root, const CLI::App* sub) const;

 private:
  void record(const CLI::App* app, const std::string& name, std::function<nlohmann::json()> get) {
    entries_[app].emplace_back(name, std::move(get));
  }

  std::map<const CLI::App*, std::vector<std::pair<std::string, std::function<nlohmann::json()>>>> entries_;
};

/// Flat JSON config files: keys are flag names without dashes. Keys naming a
/// root option apply globally; the rest go to the selected subcommand. An
/// optional "command" key must agree with the subcommand on the line.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override;
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override;

 private:
  const CLI::App* root_;
};

void write_run_config(const nlohmann::json& resolved, const std::filesystem::path& path);

/// Order-independent digest of the files below `path` (or of one file),
/// skipping run-config records.
std::uint64_t hash_outputs(const std::filesystem::path& path);

}  // namespace patchguard::cli
