#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maxsec {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Transport failure: timeout, disconnect, or an ERR reply from a remote target.
class ChannelError : public Error {
public:
    using Error::Error;
};

// Malformed wire data, hex fields, or binary containers.
class FormatError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ImageTooShort : public Error {
public:
    ImageTooShort(std::size_t have, std::size_t need)
        : Error("image too short: " + std::to_string(have) + " bytes, need at least "
                + std::to_string(need))
    {
    }
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

class UnsupportedProfile : public Error {
public:
    using Error::Error;
};

} // namespace maxsec
