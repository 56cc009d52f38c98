#pragma once

#include <string>

namespace clickseg::log {

// Thin wrappers so translation units that see libtorch's bundled fmt never
// include spdlog (which is built against the system fmt).
void info(const std::string& message);
void warn(const std::string& message);
void error(const std::string& message);
void set_level(const std::string& level);

}  // namespace clickseg::log
