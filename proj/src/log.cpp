#include "clickseg/log.hpp"

#include <spdlog/spdlog.h>

namespace clickseg::log {

void info(const std::string& message) { spdlog::info("{}", message); }
void warn(const std::string& message) { spdlog::warn("{}", message); }
void error(const std::string& message) { spdlog::error("{}", message); }
void set_level(const std::string& level) { spdlog::set_level(spdlog::level::from_str(level)); }

}  // namespace clickseg::log
