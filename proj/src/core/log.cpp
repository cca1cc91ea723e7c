#include "latentcut/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace latentcut {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::warn)};
std::mutex g_mutex;
constexpr const char* kTags[] = {"", "warning", "info", "debug"};
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_message(LogLevel level, const std::string& message) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::clog << "[latentcut " << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace latentcut
