#pragma once

#include <string>

namespace perclab {

// Warnings go to stderr unless silenced; the counter lets tests observe them.
void warn(const std::string& msg);
void set_warnings_enabled(bool on);
long warning_count();

}  // namespace perclab
