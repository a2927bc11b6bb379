#pragma once

#include <stdexcept>
#include <string>

namespace trawl {

// Invalid user-supplied configuration (pattern files, sweep configs, CLI flags).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File system or container-format failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace trawl
