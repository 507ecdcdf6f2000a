#include "tlrisk/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tlrisk::log {
namespace {

std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;

void emit(std::string_view tag, std::string_view message) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[tlrisk " << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void warn(std::string_view message) {
  if (g_level.load() >= Level::Warn) emit("warn", message);
}

void info(std::string_view message) {
  if (g_level.load() >= Level::Info) emit("info", message);
}

}  // namespace tlrisk::log
