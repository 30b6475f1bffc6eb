#pragma once

#include <string>

namespace volcomp {

// Reads CASCADE_VOLCOMP_LOG (trace|debug|info|warn|error|off) and configures
// the process-wide logger. Defaults to "info".
void init_logging();

void log_info(const std::string& msg);
void log_debug(const std::string& msg);
void log_warn(const std::string& msg);

}  // namespace volcomp
