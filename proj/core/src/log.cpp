#include "flowik/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace flowik {

void set_log_level(std::string_view level) {
  static const bool stderr_sink = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("flowik"));
    return true;
  }();
  (void)stderr_sink;

  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

void configure_logging_from_env() {
  const char* env = std::getenv("FLOWIK_LOG");
  set_log_level(env ? std::string_view(env) : std::string_view("error"));
}

}  // namespace flowik
