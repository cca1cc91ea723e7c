#pragma once

#include <sstream>
#include <string>

namespace latentcut {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_message(LogLevel level, const std::string& message);

template <typename... Args>
void log_at(LogLevel level, const Args&... args) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::ostringstream os;
  (os << ... << args);
  log_message(level, os.str());
}

template <typename... Args> void log_warn(const Args&... args) { log_at(LogLevel::warn, args...); }
template <typename... Args> void log_info(const Args&... args) { log_at(LogLevel::info, args...); }
template <typename... Args> void log_debug(const Args&... args) { log_at(LogLevel::debug, args...); }

}  // namespace latentcut
