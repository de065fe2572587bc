#include "mambareg/common.hpp"

#include <sstream>

namespace mambareg {

std::string_view to_string(MambaMode mode) {
  switch (mode) {
    case MambaMode::None: return "none";
    case MambaMode::Uni: return "uni";
    case MambaMode::Bi: return "bi";
  }
  return "none";
}

MambaMode parse_mamba_mode(std::string_view text) {
  if (text == "none") return MambaMode::None;
  if (text == "uni") return MambaMode::Uni;
  if (text == "bi") return MambaMode::Bi;
  throw ConfigError("unknown mamba mode '" + std::string(text) + "' (expected none, uni or bi)");
}

std::string shape_string(const torch::Tensor& t) {
  if (!t.defined()) return "[undefined]";
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

}  // namespace mambareg
