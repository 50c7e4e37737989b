#pragma once

#include <string_view>

namespace unisa::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Read once from UNISA_LOG_LEVEL (error|warn|info|debug); defaults to warn.
Level threshold();
void set_threshold(Level level);
void write(Level level, std::string_view message);

inline void warn(std::string_view m) { write(Level::Warn, m); }
inline void info(std::string_view m) { write(Level::Info, m); }
inline void debug(std::string_view m) { write(Level::Debug, m); }

}  // namespace unisa::log
