#pragma once

#include <string_view>

namespace flowik {

/// Sets the library log level: "error", "info" or "debug". Unknown values
/// fall back to "info".
void set_log_level(std::string_view level);

/// Applies FLOWIK_LOG if set; defaults to "error" otherwise so library
/// output stays quiet in tools and tests.
void configure_logging_from_env();

}  // namespace flowik
