#pragma once

#include <stdexcept>
#include <string>

namespace specforge {

// Base for every domain failure. The CLI maps these to exit code 1 and
// prints hint() when it is non-empty.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, std::string hint = {})
        : std::runtime_error(what), hint_(std::move(hint)) {}

    const std::string& hint() const noexcept { return hint_; }

private:
    std::string hint_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace specforge
