#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace augforest {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Level comes from AUGFOREST_LOG (error|info|debug); default info.
inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("AUGFOREST_LOG");
    if (env == nullptr) return LogLevel::info;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

// Logs go to stderr only; artifact files stay byte-deterministic.
template <typename... Args>
void log_at(LogLevel level, const char* fmt, Args... args) {
  if (level > log_level()) return;
  const char* tag = level == LogLevel::error  ? "error"
                    : level == LogLevel::info ? "info"
                                              : "debug";
  std::fprintf(stderr, "[%s] ", tag);
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

inline void log_at(LogLevel level, const std::string& msg) {
  log_at(level, "%s", msg.c_str());
}

#define AF_LOG_ERROR(...) ::augforest::log_at(::augforest::LogLevel::error, __VA_ARGS__)
#define AF_LOG_INFO(...) ::augforest::log_at(::augforest::LogLevel::info, __VA_ARGS__)
#define AF_LOG_DEBUG(...) ::augforest::log_at(::augforest::LogLevel::debug, __VA_ARGS__)

}  // namespace augforest
