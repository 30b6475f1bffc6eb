#include "volcomp/log.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace volcomp {

void init_logging() {
  auto logger = spdlog::get("volcomp");
  if (!logger) {
    logger = spdlog::stderr_color_mt("volcomp");
    spdlog::set_default_logger(logger);
  }
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("CASCADE_VOLCOMP_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

void log_info(const std::string& msg) { spdlog::info(msg); }
void log_debug(const std::string& msg) { spdlog::debug(msg); }
void log_warn(const std::string& msg) { spdlog::warn(msg); }

}  // namespace volcomp
