#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Error categories map onto CLI exit codes: config=1, runtime=2, transport=3.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RuntimeAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedsim
