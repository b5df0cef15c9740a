#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace flowik::cli {

/// Command-line options that may also be set from a JSON config file.
/// Resolution order per field: flag, then config file, then default. Each
/// resolved field remembers where its value came from.
///
/// Config keys are looked up as config[section][key] first and then as
/// config[key], so a pipeline file can share e.g. "chain" across commands:
///
///   { "seed": 7, "chain": "raily_chain3",
///     "train": { "max_batches": 50000, "hidden": "128,128,128" } }
class Settings {
 public:
  template <typename T>
  CLI::Option* bind(CLI::App* app, const std::string& flag, const std::string& section,
                    const std::string& key, T& value, const std::string& help) {
    CLI::Option* opt = app->add_option(flag, value, help)->capture_default_str();
    add_binding(app, opt, section, key, [&value](const nlohmann::json& j) { value = j.get<T>(); },
                [&value] { return render(value); });
    return opt;
  }

  CLI::Option* bind_flag(CLI::App* app, const std::string& flag, const std::string& section,
                         const std::string& key, bool& value, const std::string& help);

  /// Reads the config file. Throws FormatError.
  void load(const std::string& path);

  /// Fills unset fields of `active` (and of the global section) from the
  /// config file. Throws FormatError when a config value has the wrong type.
  void resolve(const CLI::App* active);

  /// "key = value  (source)" for the global fields and those of `active`.
  void print(std::ostream& out, const CLI::App* active) const;

  const std::string& source(const std::string& section, const std::string& key) const;

 private:
  struct Binding {
    const CLI::App* app;
    CLI::Option* option;
    std::string section;
    std::string key;
    std::function<void(const nlohmann::json&)> assign;
    std::function<std::string()> show;
    std::string source = "default";
  };

  void add_binding(const CLI::App* app, CLI::Option* opt, const std::string& section,
                   const std::string& key, std::function<void(const nlohmann::json&)> assign,
                   std::function<std::string()> show);

  template <typename T>
  static std::string render(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else {
      return nlohmann::json(v).dump();
    }
  }

  std::vector<Binding> bindings_;
  nlohmann::json config_ = nlohmann::json::object();
  std::string config_path_;
};

}  // namespace flowik::cli
