#pragma once

// Minimal process-wide logger: stderr plus an optional append-only file.

#include <filesystem>
#include <string_view>

namespace mambareg::log {

enum class Level { Info, Warn, Error };

/// Mirrors subsequent lines into `path` (truncated). An empty path stops mirroring.
void set_file(const std::filesystem::path& path);
void set_quiet(bool quiet);  // suppresses Info on stderr; the file still gets everything

void write(Level level, std::string_view message);
inline void info(std::string_view m) { write(Level::Info, m); }
inline void warn(std::string_view m) { write(Level::Warn, m); }
inline void error(std::string_view m) { write(Level::Error, m); }

}  // namespace mambareg::log
