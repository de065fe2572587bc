#include "mambareg/log.hpp"

#include <fstream>
#include <iostream>
#include <mutex>

namespace mambareg::log {

namespace {
std::mutex mu;
std::ofstream file;
bool quiet = false;

const char* prefix(Level l) {
  switch (l) {
    case Level::Info: return "";
    case Level::Warn: return "warning: ";
    case Level::Error: return "error: ";
  }
  return "";
}
}  // namespace

void set_file(const std::filesystem::path& path) {
  std::lock_guard lock(mu);
  if (file.is_open()) file.close();
  if (path.empty()) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  file.open(path, std::ios::out | std::ios::trunc);
}

void set_quiet(bool q) {
  std::lock_guard lock(mu);
  quiet = q;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(mu);
  if (!(quiet && level == Level::Info)) std::cerr << prefix(level) << message << '\n';
  if (file.is_open()) file << prefix(level) << message << '\n' << std::flush;
}

}  // namespace mambareg::log
