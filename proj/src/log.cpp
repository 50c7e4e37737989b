#include "unisa/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>

namespace unisa::log {

namespace {

Level from_env() {
  const char* v = std::getenv("UNISA_LOG_LEVEL");
  if (!v) return Level::Warn;
  const std::string s(v);
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}

std::atomic<int>& current() {
  static std::atomic<int> level{static_cast<int>(from_env())};
  return level;
}

}  // namespace

Level threshold() { return static_cast<Level>(current().load()); }
void set_threshold(Level level) { current().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
  if (static_cast<int>(level) > current().load()) return;
  static const char* const kNames[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace unisa::log
