#pragma once

#include <string>

namespace che::logging {

enum class Level { error = 0, info = 1, debug = 2 };

// Level comes from CHE_LOG={error|info|debug}; default is error.
Level current_level();
void set_level(Level level);

void error(const std::string& msg);
void warn(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace che::logging
