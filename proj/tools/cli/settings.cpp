#include "settings.hpp"

#include <fstream>
#include <ostream>

#include <spdlog/spdlog.h>

#include "flowik/errors.hpp"

namespace flowik::cli {

CLI::Option* Settings::bind_flag(CLI::App* app, const std::string& flag,
                                 const std::string& section, const std::string& key,
                                 bool& value, const std::string& help) {
  CLI::Option* opt = app->add_flag(flag, value, help);
  add_binding(app, opt, section, key, [&value](const nlohmann::json& j) { value = j.get<bool>(); },
              [&value] { return std::string(value ? "true" : "false"); });
  return opt;
}

void Settings::add_binding(const CLI::App* app, CLI::Option* opt, const std::string& section,
                           const std::string& key,
                           std::function<void(const nlohmann::json&)> assign,
                           std::function<std::string()> show) {
  bindings_.push_back({app, opt, section, key, std::move(assign), std::move(show)});
}

void Settings::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path);
  try {
    config_ = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": invalid config: " + e.what());
  }
  if (!config_.is_object()) throw FormatError(path + ": config must be a JSON object");
  config_path_ = path;
}

void Settings::resolve(const CLI::App* active) {
  for (Binding& b : bindings_) {
    if (b.app != active && !b.section.empty()) continue;
    if (b.option->count() > 0) {
      b.source = "flag";
      continue;
    }
    const nlohmann::json* value = nullptr;
    std::string where;
    if (!b.section.empty() && config_.contains(b.section) && config_[b.section].is_object() &&
        config_[b.section].contains(b.key)) {
      value = &config_[b.section][b.key];
      where = b.section + "." + b.key;
    } else if (config_.contains(b.key) && !config_[b.key].is_object()) {
      value = &config_[b.key];
      where = b.key;
    }
    if (value == nullptr) continue;
    try {
      b.assign(*value);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(config_path_ + ": bad value for '" + where + "': " + e.what());
    }
    b.source = "config " + config_path_;
  }

  // Config sections for commands other than the active one are ignored;
  // unknown keys in the active section are most likely typos.
  if (active != nullptr && config_.contains(active->get_name())) {
    for (const auto& [k, v] : config_[active->get_name()].items()) {
      bool known = false;
      for (const Binding& b : bindings_) known = known || (b.app == active && b.key == k);
      if (!known) spdlog::warn("config key '{}.{}' is not used", active->get_name(), k);
    }
  }
}

void Settings::print(std::ostream& out, const CLI::App* active) const {
  for (const Binding& b : bindings_) {
    if (!b.section.empty() && b.app != active) continue;
    const std::string name = b.section.empty() ? b.key : b.section + "." + b.key;
    out << name << " = " << b.show() << "  (" << b.source << ")\n";
  }
}

const std::string& Settings::source(const std::string& section, const std::string& key) const {
  for (const Binding& b : bindings_) {
    if (b.section == section && b.key == key) return b.source;
  }
  throw std::out_of_range("no setting " + section + "." + key);
}

}  // namespace flowik::cli
