#include "che/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace che::logging {

namespace {

std::mutex g_mutex;

Level initial_level() {
  const char* env = std::getenv("CHE_LOG");
  if (!env) return Level::error;
  const std::string value(env);
  if (value == "debug") return Level::debug;
  if (value == "info") return Level::info;
  return Level::error;
}

Level& level_ref() {
  static Level level = initial_level();
  return level;
}

void emit(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

Level current_level() { return level_ref(); }
void set_level(Level level) { level_ref() = level; }

void error(const std::string& msg) { emit("error", msg); }

void warn(const std::string& msg) {
  if (current_level() >= Level::error) emit("warn", msg);
}

void info(const std::string& msg) {
  if (current_level() >= Level::info) emit("info", msg);
}

void debug(const std::string& msg) {
  if (current_level() >= Level::debug) emit("debug", msg);
}

}  // namespace che::logging
