#include "dlrrec/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace dlrrec {

void init_logging() {
  auto logger = spdlog::get("dlrrec");
  if (!logger) logger = spdlog::stderr_color_mt("dlrrec");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("DLRREC_LOG");
  const std::string level = env ? env : "info";
  auto parsed = spdlog::level::from_str(level);
  // from_str maps unknown names to off; fall back to info instead.
  if (parsed == spdlog::level::off && level != "off") parsed = spdlog::level::info;
  spdlog::set_level(parsed);
}

}  // namespace dlrrec
