#include "recon/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace recon::log {

namespace {

Level parse_env() {
  const char* raw = std::getenv("BACKBONE_RECON_LOG");
  if (raw == nullptr) return Level::warn;
  const std::string v(raw);
  if (v == "error") return Level::error;
  if (v == "warn") return Level::warn;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

const char* tag(Level level) {
  switch (level) {
    case Level::error: return "error";
    case Level::warn: return "warn";
    case Level::info: return "info";
    default: return "debug";
  }
}

std::mutex& mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level threshold() {
  static const Level cached = parse_env();
  return cached;
}

void write(Level level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::lock_guard<std::mutex> lock(mutex());
  std::cerr << "[" << tag(level) << "] " << msg << "\n";
}

}  // namespace recon::log
