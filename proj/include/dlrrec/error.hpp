#pragma once

#include <stdexcept>
#include <string>

namespace dlrrec {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };

}  // namespace dlrrec
