#pragma once

#include <sstream>
#include <string>

namespace recon::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Threshold comes from BACKBONE_RECON_LOG={error|warn|info|debug}; default warn.
Level threshold();
void write(Level level, const std::string& msg);

namespace detail {
template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

template <typename... Args>
void error(Args&&... args) {
  write(Level::error, detail::concat(std::forward<Args>(args)...));
}
template <typename... Args>
void warn(Args&&... args) {
  write(Level::warn, detail::concat(std::forward<Args>(args)...));
}
template <typename... Args>
void info(Args&&... args) {
  write(Level::info, detail::concat(std::forward<Args>(args)...));
}
template <typename... Args>
void debug(Args&&... args) {
  write(Level::debug, detail::concat(std::forward<Args>(args)...));
}

}  // namespace recon::log
