#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace pan::logging {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

/// Level comes from PAN_LOG (error, info, debug); unset or unrecognized
/// values fall back to info.
inline Level level() {
  static const Level lvl = [] {
    const char* env = std::getenv("PAN_LOG");
    if (env == nullptr) return Level::kInfo;
    const std::string v(env);
    if (v == "error") return Level::kError;
    if (v == "info") return Level::kInfo;
    if (v == "debug") return Level::kDebug;
    std::fprintf(stderr, "pan: PAN_LOG='%s' not recognized, using info\n", env);
    return Level::kInfo;
  }();
  return lvl;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(level()); }

inline void error(const std::string& msg) {
  std::fprintf(stderr, "pan error: %s\n", msg.c_str());
}

inline void info(const std::string& msg) {
  if (enabled(Level::kInfo)) std::fprintf(stderr, "pan: %s\n", msg.c_str());
}

inline void debug(const std::string& msg) {
  if (enabled(Level::kDebug)) std::fprintf(stderr, "pan debug: %s\n", msg.c_str());
}

}  // namespace pan::logging
