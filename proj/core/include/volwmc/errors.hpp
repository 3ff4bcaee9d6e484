#pragma once

#include <stdexcept>
#include <string>

namespace volwmc {

// Invalid user input or configuration (bad arguments, malformed files,
// schema violations). The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A numerical procedure could not produce a valid answer (no implied vol,
// non-finite loss, ...). The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Persisted artifact could not be read back (truncated, wrong magic).
class CorruptFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace volwmc
