#ifndef SALN_LOG_HPP
#define SALN_LOG_HPP

#include <string>

namespace saln {

// Verbosity is read once from the SALN_LOG environment variable
// (error|info|debug); default is info.
enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace saln

#endif
